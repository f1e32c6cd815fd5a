// SPDX-License-Identifier: Apache-2.0
#include "nbf/geom.hpp"

#include "test_util.hpp"

#include <doctest.h>

using namespace nbf;
using nbf::testing::rel_err;

namespace
{

void check_vec(const Vec3 &a, const Vec3 &b, double tol = 1e-12)
{
    CHECK(std::abs(a.x - b.x) <= tol);
    CHECK(std::abs(a.y - b.y) <= tol);
    CHECK(std::abs(a.z - b.z) <= tol);
}

} // namespace

TEST_CASE("rotation_matrix of zero angles is the identity")
{
    const Mat3 r = rotation_matrix({0.0, 0.0, 0.0});
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j)
            CHECK(r[i][j] == (i == j ? 1.0 : 0.0));
}

TEST_CASE("rotation_matrix quarter turns")
{
    check_vec(rotation_matrix({0.0, 0.0, kPi / 2}) * Vec3{1, 0, 0}, {0, 1, 0});
    // R_y(pi/2) = [[0,0,1],[0,1,0],[-1,0,0]]
    check_vec(rotation_matrix({0.0, kPi / 2, 0.0}) * Vec3{1, 0, 0}, {0, 0, -1});
}

TEST_CASE("rotation_matrix is orthonormal with unit determinant")
{
    Rng rng(11);
    for (int t = 0; t < 1000; ++t)
    {
        const Mat3 r = rotation_matrix(nbf::testing::random_orientation(rng));
        CHECK(std::abs(determinant(r) - 1.0) <= 1e-12);
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j)
            {
                double d = 0.0;
                for (int k = 0; k < 3; ++k)
                    d += r[k][i] * r[k][j];
                CHECK(std::abs(d - (i == j ? 1.0 : 0.0)) <= 1e-12);
            }
    }
}

TEST_CASE("panel_basis examples")
{
    const PanelBasis b0 = panel_basis({});
    check_vec(b0.n, {1, 0, 0});
    check_vec(b0.h, {0, 1, 0});
    check_vec(b0.v, {0, 0, 1});

    const PanelBasis b1 = panel_basis({0, 0, 2 * kPi / 3});
    check_vec(b1.h, {-0.8660254037844387, -0.4999999999999998, 0.0});

    // 15 degree down-tilt: boresight dips below the horizon, h is fixed.
    const PanelBasis b2 = panel_basis({0, deg2rad(15.0), 0});
    check_vec(b2.v, {0.25881904510252074, 0.0, 0.9659258262890683});
    check_vec(b2.n, {0.9659258262890683, 0.0, -0.25881904510252074});
    check_vec(b2.h, {0, 1, 0});
}

TEST_CASE("panel_basis stays orthonormal")
{
    Rng rng(12);
    for (int t = 0; t < 1000; ++t)
    {
        const PanelBasis b = panel_basis(nbf::testing::random_orientation(rng));
        CHECK(std::abs(dot(b.n, b.h)) <= 1e-12);
        CHECK(std::abs(dot(b.n, b.v)) <= 1e-12);
        CHECK(std::abs(dot(b.h, b.v)) <= 1e-12);
        CHECK(std::abs(norm(b.n) - 1.0) <= 1e-12);
        CHECK(std::abs(norm(b.h) - 1.0) <= 1e-12);
        CHECK(std::abs(norm(b.v) - 1.0) <= 1e-12);
    }
}

TEST_CASE("unit_direction")
{
    check_vec(unit_direction(0.0, 1.234), {0, 0, 1});
    check_vec(unit_direction(kPi / 2, 0.0), {1, 0, 0});
    check_vec(unit_direction(kPi / 2, kPi / 2), {0, 1, 0});
    for (int i = 0; i <= 200; ++i)
        for (int j = 0; j < 200; ++j)
        {
            const Vec3 u = unit_direction(kPi * i / 200.0, -kPi + 2 * kPi * j / 200.0);
            CHECK(std::abs(norm(u) - 1.0) <= 4e-16);
        }
}

TEST_CASE("element_gain examples")
{
    const ErpConfig dir{};
    CHECK(element_gain({0.3, 0.4, std::sqrt(0.75)}, PanelOrientation{}, ErpConfig::isotropic()) == 1.0);
    CHECK(rel_err(element_gain({1, 0, 0}, PanelOrientation{}, dir), 6.309573444801933) <= 1e-14);

    const PanelOrientation tilted{0.0, deg2rad(15.0), 0.0};
    CHECK(rel_err(element_gain(panel_basis(tilted).n, tilted, dir), 6.309573444801933) <= 1e-12);

    // 90 degrees off boresight in azimuth: 12 (90/65)^2 = 23.006 dB, above the floor.
    CHECK(rel_err(element_gain({0, 1, 0}, PanelOrientation{}, dir), 0.03157972065330905) <= 1e-12);
    // Directly behind the panel the 30 dB floor applies.
    CHECK(rel_err(element_gain({-1, 0, 0}, PanelOrientation{}, dir), 0.00630957344480193) <= 1e-12);
}

TEST_CASE("element_gain never exceeds the peak")
{
    Rng rng(13);
    const ErpConfig dir{};
    const double peak = std::pow(10.0, dir.peak_gain_dbi / 10.0);
    for (int t = 0; t < 5000; ++t)
    {
        const PanelOrientation o = nbf::testing::random_orientation(rng);
        CHECK(element_gain(nbf::testing::random_unit(rng), o, dir) <= peak * (1 + 1e-15));
    }
}

TEST_CASE("element_gain_grad matches central differences")
{
    Rng rng(14);
    const ErpConfig dir{};
    int checked = 0;
    for (int t = 0; t < 200; ++t)
    {
        const PanelBasis b = panel_basis(nbf::testing::random_orientation(rng));
        const Vec3 u = nbf::testing::random_unit(rng);
        const GainWithGrad g = element_gain_grad(u, b, dir);
        CHECK(rel_err(g.gain, element_gain(u, b, dir)) <= 1e-15);
        const double h = 1e-6;
        for (int c = 0; c < 3; ++c)
        {
            Vec3 up = u, um = u;
            (c == 0 ? up.x : c == 1 ? up.y : up.z) += h;
            (c == 0 ? um.x : c == 1 ? um.y : um.z) -= h;
            const double fd = (element_gain(up, b, dir) - element_gain(um, b, dir)) / (2 * h);
            const double an = g.grad[c];
            // Skip the rare probes that straddle a kink of the piecewise pattern.
            const double fd_l = (element_gain(u, b, dir) - element_gain(um, b, dir)) / h;
            const double fd_r = (element_gain(up, b, dir) - element_gain(u, b, dir)) / h;
            if (rel_err(fd_l, fd_r, 1e-6) > 1e-3)
                continue;
            CHECK(std::abs(fd - an) <= 1e-5 * std::max(std::abs(fd), 1e-3));
            ++checked;
        }
    }
    CHECK(checked > 500);
}
