// SPDX-License-Identifier: Apache-2.0
#include "nbf/whitebox.hpp"

#include "test_util.hpp"

#include <doctest.h>

#include <algorithm>

using namespace nbf;
using namespace nbf::testing;

namespace
{

cplx direct_sum(double psi, int n)
{
    cplx acc{};
    for (int k = 0; k < n; ++k)
        acc += std::polar(1.0, k * psi);
    return acc;
}

ArrayConfig panel_8x4(ErpConfig erp = ErpConfig::isotropic())
{
    return ArrayConfig::half_wavelength(8, 4, 3.5e9, PanelOrientation{}, erp);
}

} // namespace

TEST_CASE("s_n examples")
{
    CHECK(s_n(0.0, 8) == cplx(8.0, 0.0));
    CHECK(std::abs(s_n(kPi, 4)) <= 1e-15);
    CHECK(std::abs(std::abs(s_n(kPi / 2, 2)) - std::sqrt(2.0)) <= 1e-15);
    CHECK(std::abs(s_n(2 * kPi, 5) - cplx(5.0, 0.0)) <= 1e-12);
}

TEST_CASE("s_n matches the geometric sum")
{
    Rng rng(41);
    for (int t = 0; t < 2000; ++t)
    {
        const int n = 1 + static_cast<int>(rng.below(16));
        const double psi = rng.uniform(-20.0, 20.0);
        CHECK(std::abs(s_n(psi, n) - direct_sum(psi, n)) <= 1e-12 * n);
        CHECK(std::abs(s_n_power(psi, n) - std::norm(direct_sum(psi, n))) <= 1e-11 * n * n);
    }
}

TEST_CASE("s_n is continuous through the removable singularity")
{
    for (int n : {1, 2, 4, 8, 32})
        for (double psi : {1e-4, 3e-5, 1e-6, 2e-7, 1e-9, 0.0, -1e-8, -5e-6, -1e-4})
        {
            // The magnitude deviates only at second order; the complex value also
            // carries the linear phase exp(j (N-1) psi / 2).
            const double bound = n * psi * psi * n * n / 8.0;
            CHECK(std::abs(std::abs(s_n(psi, n)) - n) <= bound + 1e-13 * n);
            CHECK(std::abs(s_n(psi, n) - cplx(n, 0.0)) <= n * (n - 1) * std::abs(psi) / 2.0 + bound + 1e-13 * n);
            CHECK(std::abs(s_n(psi, n) - direct_sum(psi, n)) <= 1e-12 * n);
        }
}

TEST_CASE("s_n_power_deriv matches central differences")
{
    Rng rng(42);
    for (int t = 0; t < 500; ++t)
    {
        const int n = 1 + static_cast<int>(rng.below(12));
        const double psi = rng.uniform(-7.0, 7.0), h = 1e-6;
        const double fd = (s_n_power(psi + h, n) - s_n_power(psi - h, n)) / (2 * h);
        CHECK(std::abs(fd - s_n_power_deriv(psi, n)) <= 1e-6 * std::max(1.0, double(n * n * n)));
    }
}

TEST_CASE("path_gain examples")
{
    const ArrayConfig cfg = panel_8x4();
    ScpEntry s;
    s.u_tx = normalized(Vec3{0.9, -0.2, 0.1});
    s.p = 1.0;
    const SpatialFreq z = spatial_freq(cfg, s.u_tx);
    const PathGain g = path_gain(s, cfg, {-z.zeta_y, -z.zeta_z});
    CHECK(rel_err(g.gamma, 32.0) <= 1e-12);
    CHECK(rel_err(g.delta_sq, 32.0) <= 1e-12);

    s.p = 0.0;
    CHECK(path_gain(s, cfg, {0.1, 0.2}).gamma == 0.0);
}

TEST_CASE("path_gain equals the brute-force inner product")
{
    Rng rng(43);
    for (int t = 0; t < 500; ++t)
    {
        const ArrayConfig cfg = random_array(rng, t % 2 == 0);
        const ScpEntry s = random_scp(rng);
        const BeamSpec beam = random_beam(rng);
        const double brute =
            std::norm(bilinear(arv(cfg, s.u_tx), dft_weight(beam, cfg))) * element_gain(s.u_tx, cfg.orientation, cfg.erp) * s.p;
        const PathGain g = path_gain(s, cfg, beam);
        CHECK(std::abs(g.gamma - brute) <= 1e-11 * s.p * cfg.n_tx() * 6.31);
        CHECK(g.delta_sq >= 0.0);
        CHECK(g.delta_sq <= cfg.n_tx() * (1 + 1e-12));
    }
}

TEST_CASE("rsrp_mean and rsrp_variance examples")
{
    const ArrayConfig cfg = panel_8x4();
    CHECK(rsrp_mean(Mcpp{}, cfg, {0, 0}) == 0.0);
    CHECK(rsrp_variance(Mcpp{}, cfg, {0, 0}) == 0.0);

    ScpEntry s;
    s.u_tx = normalized(Vec3{1.0, 0.25, -0.3});
    s.p = 1.0;
    const SpatialFreq z = spatial_freq(cfg, s.u_tx);
    const BeamSpec matched{-z.zeta_y, -z.zeta_z};
    CHECK(rel_err(rsrp_mean(Mcpp{{s}}, cfg, matched), 32.0) <= 1e-12);
    CHECK(rsrp_variance(Mcpp{{s}}, cfg, matched) == 0.0);

    // two paths with equal gamma: (2g)^2 - 2g^2 = 2 g^2
    ScpEntry s2 = s;
    s2.tau = 1e-6;
    const double gamma = path_gain(s, cfg, matched).gamma;
    CHECK(rel_err(rsrp_variance(Mcpp{{s, s2}}, cfg, matched), 2 * gamma * gamma) <= 1e-12);
}

TEST_CASE("gates scale path contributions")
{
    Rng rng(44);
    const ArrayConfig cfg = panel_8x4(ErpConfig{});
    const Mcpp m = random_mcpp(rng, 3);
    const BeamSpec beam = random_beam(rng);
    const std::vector<double> ones(3, 1.0), zeros(3, 0.0);
    CHECK(rsrp_mean(m, cfg, beam, ones) == rsrp_mean(m, cfg, beam));
    CHECK(rsrp_mean(m, cfg, beam, zeros) == 0.0);
    const std::vector<double> bad(2, 1.0);
    CHECK_THROWS_AS(rsrp_mean(m, cfg, beam, bad), std::invalid_argument);
}

TEST_CASE("whitebox statistics invariants")
{
    Rng rng(45);
    for (int t = 0; t < 10000; ++t)
    {
        const ArrayConfig cfg = random_array(rng, t % 3 != 0);
        const BeamSpec beam = random_beam(rng);
        const Mcpp m = random_mcpp(rng, 1 + static_cast<int>(rng.below(10)));
        const RsrpStats st = rsrp_stats(m, cfg, beam);
        CHECK(st.mean >= 0.0);
        CHECK(st.variance >= 0.0);
        CHECK(st.variance <= st.mean * st.mean);

        if (t % 20 == 0)
        {
            Mcpp pm = m;
            rng.shuffle(pm.paths);
            const RsrpStats ps = rsrp_stats(pm, cfg, beam);
            CHECK(ps.mean == st.mean);
            CHECK(ps.variance == st.variance);

            const Mcpp other = random_mcpp(rng, 1 + static_cast<int>(rng.below(5)));
            Mcpp both = m;
            both.paths.insert(both.paths.end(), other.paths.begin(), other.paths.end());
            CHECK(rel_err(rsrp_mean(both, cfg, beam), rsrp_mean(m, cfg, beam) + rsrp_mean(other, cfg, beam)) <=
                  1e-12);
        }
    }
}

TEST_CASE("rsrp_mean_grad examples and finite differences")
{
    const ArrayConfig iso = panel_8x4();
    ScpEntry s;
    s.u_tx = normalized(Vec3{1.0, -0.4, 0.2});
    s.p = 2.5;
    s.tau = 7e-7;
    const SpatialFreq z = spatial_freq(iso, s.u_tx);
    const auto g0 = rsrp_mean_grad(Mcpp{{s}}, iso, {-z.zeta_y, -z.zeta_z});
    CHECK(rel_err(g0[0].d_p, 32.0) <= 1e-12);
    CHECK(g0[0].d_tau == 0.0);
    CHECK(g0[0].d_u_rx == Vec3{});

    Rng rng(46);
    int cases = 0;
    for (int t = 0; t < 40 && cases < 20; ++t)
    {
        const ArrayConfig cfg = random_array(rng, t % 2 == 0);
        const BeamSpec beam = random_beam(rng);
        const Mcpp m = random_mcpp(rng, 1 + static_cast<int>(rng.below(5)));
        std::vector<double> gates(m.paths.size());
        for (double &g : gates)
            g = rng.uniform(0.1, 1.0);
        const auto grad = rsrp_mean_grad(m, cfg, beam, gates);
        const double h = 1e-6;
        const double scale = rsrp_mean(m, cfg, beam, gates);
        bool ok = true;
        auto fd = [&](auto &&mutate) {
            Mcpp mp = m, mm = m;
            std::vector<double> gp = gates, gm = gates;
            mutate(mp, gp, +h);
            mutate(mm, gm, -h);
            return (rsrp_mean(mp, cfg, beam, gp) - rsrp_mean(mm, cfg, beam, gm)) / (2 * h);
        };
        // relative tolerance plus the central-difference roundoff floor at
        // the scale of the whole sum (small paths cancel against big ones)
        auto close = [&](double a, double b, double step) {
            return std::abs(a - b) <= 1e-5 * std::max(std::abs(a), std::abs(b)) + 1e-15 * scale / step;
        };
        for (std::size_t i = 0; i < m.paths.size(); ++i)
        {
            // p is ~1e-9..1e-6 so step in log space: scale the probe with p
            const double p = m.paths[i].p;
            const double fd_p = fd([&](Mcpp &mm, std::vector<double> &, double e) { mm.paths[i].p += e * p; }) / p;
            ok &= close(grad[i].d_p, fd_p, h * p);
            const double fd_g = fd([&](Mcpp &, std::vector<double> &gg, double e) { gg[i] += e; });
            ok &= close(grad[i].d_gate, fd_g, h);
            for (int c = 0; c < 3; ++c)
            {
                const double fd_u = fd([&](Mcpp &mm, std::vector<double> &, double e) {
                    Vec3 &u = mm.paths[i].u_tx;
                    (c == 0 ? u.x : c == 1 ? u.y : u.z) += e;
                });
                ok &= close(grad[i].d_u_tx[c], fd_u, h);
            }
            const double fd_tau = fd([&](Mcpp &mm, std::vector<double> &, double e) { mm.paths[i].tau += e; });
            CHECK(fd_tau == 0.0);
        }
        CHECK(ok);
        ++cases;
    }
    CHECK(cases == 20);
}

TEST_CASE("matched-beam optimality over the critical codebook")
{
    const ArrayConfig cfg = panel_8x4();
    const auto cb = dft_codebook(cfg, 1, 1);
    auto wrap = [](double x) {
        x = std::fmod(x + kPi, 2 * kPi);
        return (x < 0 ? x + 2 * kPi : x) - kPi;
    };
    for (int i = 0; i < 37; ++i)
        for (int j = 0; j < 23; ++j)
        {
            // direction with prescribed spatial frequencies (h = +y, v = +z)
            const double hy = -0.97 + 1.94 * i / 36.0, vz = -0.93 + 1.86 * j / 22.0;
            if (hy * hy + vz * vz >= 1.0)
                continue;
            ScpEntry s;
            s.u_tx = {std::sqrt(1 - hy * hy - vz * vz), hy, vz};
            s.p = 1.0;
            const SpatialFreq z = spatial_freq(cfg, s.u_tx);
            std::size_t best = 0;
            double best_v = -1.0;
            for (std::size_t b = 0; b < cb.size(); ++b)
            {
                const double v = rsrp_mean(Mcpp{{s}}, cfg, cb[b]);
                if (v > best_v)
                    best_v = v, best = b;
            }
            // nearest codeword to -zeta on each axis independently
            auto nearest_on_axis = [&](int n, double zeta) {
                int arg = 0;
                double d_min = 1e300;
                for (int m = 0; m < n; ++m)
                {
                    const double d = std::abs(wrap(-kPi + 2 * kPi * m / n + zeta));
                    if (d < d_min)
                        d_min = d, arg = m;
                }
                return arg;
            };
            const std::size_t nearest =
                static_cast<std::size_t>(nearest_on_axis(cfg.n_y, z.zeta_y) * cfg.n_z + nearest_on_axis(cfg.n_z, z.zeta_z));
            CHECK(best == nearest);
        }
}

TEST_CASE("parallel kernels reproduce the serial reference")
{
    Rng rng(47);
    const ArrayConfig cfg = panel_8x4(ErpConfig{});
    std::vector<Mcpp> ms;
    for (int i = 0; i < 64; ++i)
        ms.push_back(random_mcpp(rng, 1 + static_cast<int>(rng.below(10))));
    const auto beams = dft_codebook(cfg, 1, 1);
    CHECK(rsrp_mean_table(ms, cfg, beams) == rsrp_mean_table_serial(ms, cfg, beams));
}

TEST_CASE("dense batch whitebox agrees with the per-MCPP form")
{
    Rng rng(48);
    const ArrayConfig cfg = panel_8x4(ErpConfig{});
    const auto beams = dft_codebook(cfg, 1, 1);
    const std::size_t B = 5, L = 4;
    std::vector<double> u(B * L * 3), p(B * L), gate(B * L);
    std::vector<Mcpp> ms(B);
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t l = 0; l < L; ++l)
        {
            ScpEntry s = random_scp(rng);
            const std::size_t i = b * L + l;
            u[3 * i] = s.u_tx.x, u[3 * i + 1] = s.u_tx.y, u[3 * i + 2] = s.u_tx.z;
            p[i] = s.p;
            gate[i] = rng.uniform();
            ms[b].paths.push_back(s);
        }
    const WhiteboxBatch in{B, L, u, p, gate};
    std::vector<double> mean(B * beams.size());
    whitebox_mean_forward(in, cfg, beams, mean);

    std::vector<double> gm(B * beams.size());
    for (double &g : gm)
        g = rng.normal();
    std::vector<double> gu(u.size(), 0.0), gp(p.size(), 0.0), gg(gate.size(), 0.0);
    whitebox_mean_backward(in, cfg, beams, gm, gu, gp, gg);

    for (std::size_t b = 0; b < B; ++b)
    {
        const std::span<const double> gates(gate.data() + b * L, L);
        std::vector<PathMeanGrad> acc(L);
        for (std::size_t k = 0; k < beams.size(); ++k)
        {
            CHECK(rel_err(mean[b * beams.size() + k], rsrp_mean(ms[b], cfg, beams[k], gates)) <= 1e-12);
            const auto g = rsrp_mean_grad(ms[b], cfg, beams[k], gates);
            for (std::size_t l = 0; l < L; ++l)
            {
                const double w = gm[b * beams.size() + k];
                acc[l].d_p += w * g[l].d_p;
                acc[l].d_gate += w * g[l].d_gate;
                acc[l].d_u_tx += g[l].d_u_tx * w;
            }
        }
        for (std::size_t l = 0; l < L; ++l)
        {
            const std::size_t i = b * L + l;
            CHECK(rel_err(gp[i], acc[l].d_p, 1e-6) <= 1e-10);
            CHECK(rel_err(gg[i], acc[l].d_gate, 1e-15) <= 1e-10);
            for (int c = 0; c < 3; ++c)
                CHECK(rel_err(gu[3 * i + c], acc[l].d_u_tx[c], 1e-15) <= 1e-10);
        }
    }
}
