// SPDX-License-Identifier: Apache-2.0
#include "nbf/array.hpp"

#include "test_util.hpp"

#include <doctest.h>

using namespace nbf;
using namespace nbf::testing;

namespace
{

void check_cvec(const CVec &a, const CVec &b, double tol = 1e-12)
{
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i)
        CHECK(std::abs(a[i] - b[i]) <= tol);
}

ArrayConfig flat_array(int ny, int nz)
{
    return ArrayConfig::half_wavelength(ny, nz, 3.5e9, PanelOrientation{}, ErpConfig::isotropic());
}

} // namespace

TEST_CASE("arv_axis examples")
{
    const double lambda = kSpeedOfLight / 3.5e9;
    check_cvec(arv_axis(1, lambda / 2, {0, 1, 0}, {0, 1, 0}, 3.5e9), {1.0});
    check_cvec(arv_axis(4, lambda / 2, {0, 1, 0}, {1, 0, 0}, 3.5e9), {1.0, 1.0, 1.0, 1.0});
    check_cvec(arv_axis(2, lambda / 2, {0, 1, 0}, {0, 1, 0}, 3.5e9), {1.0, -1.0});
}

TEST_CASE("arv examples")
{
    check_cvec(arv(flat_array(1, 1), {0.6, 0.8, 0.0}), {1.0});
    check_cvec(arv(flat_array(3, 2), {1, 0, 0}), CVec(6, 1.0));
    // y-major Kronecker order: index k_y * n_z + k_z
    check_cvec(arv(flat_array(2, 2), {0, 1, 0}), {1.0, 1.0, -1.0, -1.0});
}

TEST_CASE("arv entries have unit modulus")
{
    Rng rng(21);
    for (int t = 0; t < 200; ++t)
    {
        const ArrayConfig cfg = random_array(rng, false);
        for (const cplx &x : arv(cfg, random_unit(rng)))
            CHECK(std::abs(std::abs(x) - 1.0) <= 1e-12);
    }
}

TEST_CASE("dft_weight examples")
{
    const ArrayConfig cfg = flat_array(8, 4);
    for (const cplx &x : dft_weight({0, 0}, cfg))
        CHECK(std::abs(x - cplx(1.0 / std::sqrt(32.0), 0.0)) <= 1e-15);

    Rng rng(22);
    for (int t = 0; t < 100; ++t)
    {
        double n2 = 0.0;
        for (const cplx &x : dft_weight(random_beam(rng), cfg))
            n2 += std::norm(x);
        CHECK(std::abs(n2 - 1.0) <= 1e-12);
    }
    check_cvec(dft_weight({kPi, 0.0}, flat_array(2, 1)), {1.0 / std::sqrt(2.0), -1.0 / std::sqrt(2.0)});
}

TEST_CASE("spatial_freq examples")
{
    const ArrayConfig cfg = flat_array(8, 4);
    const SpatialFreq z0 = spatial_freq(cfg, {1, 0, 0});
    CHECK(std::abs(z0.zeta_y) <= 1e-15);
    CHECK(std::abs(z0.zeta_z) <= 1e-15);
    CHECK(std::abs(spatial_freq(cfg, {0, 1, 0}).zeta_y - kPi) <= 1e-12);
    CHECK(std::abs(spatial_freq(cfg, {std::sqrt(0.75), 0.5, 0}).zeta_y - kPi / 2) <= 1e-12);
}

TEST_CASE("dft_codebook enumeration")
{
    CHECK(dft_codebook(flat_array(8, 4), 1, 1).size() == 32);
    const auto single = dft_codebook(flat_array(1, 1), 1, 1);
    REQUIRE(single.size() == 1);
    CHECK(single[0] == BeamSpec{0.0, 0.0});

    const auto os = dft_codebook(flat_array(2, 1), 2, 1);
    REQUIRE(os.size() == 4);
    const double expect[4] = {-kPi, -kPi / 2, 0.0, kPi / 2};
    for (int i = 0; i < 4; ++i)
    {
        CHECK(std::abs(os[i].xi_y - expect[i]) <= 1e-15);
        CHECK(os[i].xi_z == 0.0);
    }
    // xi_y-major order
    const auto cb = dft_codebook(flat_array(2, 2), 1, 1);
    CHECK(cb[1].xi_y == cb[0].xi_y);
    CHECK(cb[2].xi_y > cb[1].xi_y);
}

TEST_CASE("critical codebook is orthogonal")
{
    const ArrayConfig cfg = flat_array(8, 4);
    const auto cb = dft_codebook(cfg, 1, 1);
    std::vector<CVec> w;
    for (const auto &b : cb)
        w.push_back(dft_weight(b, cfg));
    for (std::size_t i = 0; i < w.size(); ++i)
        for (std::size_t j = i + 1; j < w.size(); ++j)
        {
            cplx ip{};
            for (std::size_t k = 0; k < w[i].size(); ++k)
                ip += std::conj(w[i][k]) * w[j][k];
            CHECK(std::abs(ip) <= 1e-10);
        }
}

TEST_CASE("array factor is bounded by N_tx and reaches it for the matched beam")
{
    Rng rng(23);
    for (int t = 0; t < 300; ++t)
    {
        const ArrayConfig cfg = random_array(rng, false);
        const Vec3 u = random_unit(rng);
        const CVec a = arv(cfg, u);
        const double n = cfg.n_tx();
        CHECK(std::norm(bilinear(a, dft_weight(random_beam(rng), cfg))) <= n * (1 + 1e-12));
        const SpatialFreq z = spatial_freq(cfg, u);
        CHECK(std::abs(std::norm(bilinear(a, dft_weight({-z.zeta_y, -z.zeta_z}, cfg))) - n) <= 1e-10 * n);
    }
}
