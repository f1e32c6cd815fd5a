// SPDX-License-Identifier: Apache-2.0
#include "nbf/ckm.hpp"
#include "nbf/whitebox.hpp"

#include "test_util.hpp"

#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

using namespace nbf;
using namespace nbf::testing;

namespace
{

const BeamSpec kBeam{0.25, -0.5};

GridCkm line_map(int n)
{
    return GridCkm(GridSpec{0.0, 0.0, 1.0, n, 1}, {kBeam});
}

Measurement at(double x, double y, double v, double sigma = 0.0, double t = 0.0)
{
    return {x, y, sigma, kBeam, v, t};
}

double weight_sum(const std::vector<std::pair<std::size_t, double>> &w)
{
    double s = 0.0;
    for (const auto &[a, v] : w)
        s += v;
    return s;
}

} // namespace

TEST_CASE("ingest snaps onto an anchor")
{
    GridCkm ckm(GridSpec{0.0, 0.0, 2.0, 5, 5}, {kBeam});
    const auto w = ckm.ingest(at(5.0, 3.0, -70.0), 0.0);
    REQUIRE(w.size() == 1);
    CHECK(w[0].first == ckm.grid().index(2, 1));
    CHECK(w[0].second == 1.0);
    CHECK(*ckm.mean_db(w[0].first, 0) == -70.0);
    CHECK(ckm.populated_anchors() == 1);
}

TEST_CASE("ingest splits symmetrically")
{
    // two anchors at 0.5 and 1.5; radius 3d covers both and nothing else
    GridCkm ckm = line_map(2);
    const auto w = ckm.ingest(at(1.0, 0.5, -60.0), 0.0);
    REQUIRE(w.size() == 2);
    CHECK(w[0].second == doctest::Approx(0.5).epsilon(1e-15));
    CHECK(w[1].second == doctest::Approx(0.5).epsilon(1e-15));
}

TEST_CASE("ingest weights sum to one and stay local")
{
    Rng rng(12);
    GridCkm ckm(GridSpec{10.0, -5.0, 1.5, 20, 14}, {kBeam});
    double t = 0.0;
    for (int i = 0; i < 200; ++i)
    {
        const double x = rng.uniform(10.0, 40.0), y = rng.uniform(-5.0, 16.0);
        const double sigma = rng.uniform() < 0.3 ? 0.0 : rng.uniform(0.0, 8.0);
        t += rng.uniform(0.0, 100.0);
        const auto w = ckm.ingest(at(x, y, rng.uniform(-100, -50), sigma), t);
        CHECK(std::abs(weight_sum(w) - 1.0) < 1e-12);
        const double radius = std::max(4.5, 2.0 * sigma);
        for (const auto &[a, v] : w)
        {
            CHECK(v > 0.0);
            CHECK(std::hypot(ckm.grid().anchor_x(a) - x, ckm.grid().anchor_y(a) - y) <= radius * (1 + 1e-12));
        }
    }
    CHECK_THROWS_AS(ckm.ingest(at(9.0, 0.0, -60.0), t), std::invalid_argument);
    CHECK_THROWS_AS(ckm.ingest(at(20.0, 0.0, -60.0), t - 1.0), std::invalid_argument);
}

TEST_CASE("weights decay with the half-life")
{
    GridCkm ckm(GridSpec{0.0, 0.0, 1.0, 4, 4}, {kBeam}, 100.0);
    ckm.ingest(at(0.5, 0.5, -80.0), 0.0);
    CHECK(ckm.weight_at(0, 0, 100.0) == doctest::Approx(0.5).epsilon(1e-15));
    CHECK(ckm.weight_at(0, 0, 300.0) == doctest::Approx(0.125).epsilon(1e-15));

    // after one half-life a fresh sample counts twice as much as the old one
    ckm.ingest(at(0.5, 0.5, -70.0), 100.0);
    CHECK(ckm.cell(0, 0).weight_total == doctest::Approx(1.5).epsilon(1e-15));
    CHECK(*ckm.mean_db(0, 0) == doctest::Approx((0.5 * -80.0 + 1.0 * -70.0) / 1.5).epsilon(1e-14));
}

TEST_CASE("ingest order with equal timestamps is irrelevant")
{
    Rng rng(5);
    std::vector<Measurement> ms;
    for (int i = 0; i < 6; ++i)
        ms.push_back(at(rng.uniform(0, 8), rng.uniform(0, 8), rng.uniform(-90, -60), 1.0, i < 3 ? 10.0 : 50.0));
    GridCkm a(GridSpec{0.0, 0.0, 1.0, 8, 8}, {kBeam}, 30.0), b = a;
    for (const auto &m : ms)
        a.ingest(m, m.timestamp);
    const int order[] = {2, 0, 1, 5, 3, 4};
    for (int i : order)
        b.ingest(ms[i], ms[i].timestamp);
    for (std::size_t k = 0; k < a.grid().size(); ++k)
    {
        CHECK(a.weight_at(k, 0, 60.0) == doctest::Approx(b.weight_at(k, 0, 60.0)).epsilon(1e-12));
        if (a.mean_db(k, 0))
            CHECK(*a.mean_db(k, 0) == doctest::Approx(*b.mean_db(k, 0)).epsilon(1e-12));
    }
}

TEST_CASE("unknown beams are appended")
{
    GridCkm ckm = line_map(3);
    ckm.ingest(at(0.5, 0.5, -60.0), 0.0);
    Measurement m = at(2.5, 0.5, -75.0);
    m.beam = {1.0, 1.0};
    ckm.ingest(m, 1.0);
    REQUIRE(ckm.beams().size() == 2);
    CHECK(*ckm.mean_db(0, 0) == -60.0);
    CHECK(*ckm.mean_db(2, 1) == -75.0);
    CHECK_FALSE(ckm.mean_db(2, 0));
}

TEST_CASE("idw_rsrp_query")
{
    GridCkm ckm = line_map(4);
    ckm.set_label(0, 0, 0.0);
    ckm.set_label(3, 0, 3.0);
    CHECK(idw_rsrp_query(ckm, 1.5, 0.5, kBeam) == doctest::Approx(0.6).epsilon(1e-14));
    CHECK(idw_rsrp_query(ckm, 0.5, 0.5, kBeam) == 0.0);
    CHECK(idw_rsrp_query(ckm, 3.5, 0.5, kBeam) == 3.0);
    CHECK_THROWS_AS(idw_rsrp_query(ckm, 1.5, 0.5, BeamSpec{9, 9}), NoCoverage);

    GridCkm sparse(GridSpec{0.0, 0.0, 1.0, 10, 1}, {kBeam});
    sparse.set_label(0, 0, -50.0);
    CHECK_THROWS_AS(idw_rsrp_query(sparse, 8.5, 0.5, kBeam), NoCoverage);

    Rng rng(8);
    GridCkm field(GridSpec{0.0, 0.0, 2.0, 12, 12}, {kBeam});
    for (std::size_t a = 0; a < field.grid().size(); ++a)
        if (rng.uniform() < 0.5)
            field.set_label(a, 0, rng.uniform(-100.0, -40.0));
    GridCkm flat = field;
    for (std::size_t a = 0; a < flat.grid().size(); ++a)
        if (flat.mean_db(a, 0))
            flat.set_label(a, 0, -66.0);
    for (int i = 0; i < 300; ++i)
    {
        const double x = rng.uniform(0, 24), y = rng.uniform(0, 24);
        double lo = 1e9, hi = -1e9;
        for (std::size_t a = 0; a < field.grid().size(); ++a)
            if (field.mean_db(a, 0) &&
                std::hypot(field.grid().anchor_x(a) - x, field.grid().anchor_y(a) - y) <= 6.0)
            {
                lo = std::min(lo, *field.mean_db(a, 0));
                hi = std::max(hi, *field.mean_db(a, 0));
            }
        if (lo > hi)
            continue;
        const double v = idw_rsrp_query(field, x, y, kBeam);
        CHECK(v >= lo - 1e-12);
        CHECK(v <= hi + 1e-12);
        CHECK(idw_rsrp_query(flat, x, y, kBeam) == doctest::Approx(-66.0).epsilon(1e-14));
    }
}

TEST_CASE("idw_mcpp_query")
{
    const ArrayConfig cfg;
    Rng rng(21);
    GridCkm ckm(GridSpec{0.0, 0.0, 1.0, 2, 1}, {kBeam});
    ScpEntry s1 = random_scp(rng), s2 = s1;
    s2.p = s1.p * 37.0;
    ckm.set_mcpp(0, Mcpp{{s1}});
    ckm.set_mcpp(1, Mcpp{{s2}});

    const Mcpp mid = idw_mcpp_interpolate(ckm, 1.0, 0.5);
    REQUIRE(mid.paths.size() == 1);
    CHECK(rel_err(mid.paths[0].p, std::sqrt(s1.p * s2.p)) < 1e-12);
    CHECK(norm(mid.paths[0].u_tx - s1.u_tx) < 1e-14);

    CHECK(idw_mcpp_query(ckm, 0.5, 0.5, cfg, kBeam) == to_db(rsrp_mean(Mcpp{{s1}}, cfg, kBeam)));

    // shared MCPP everywhere reproduces the anchor value
    const Mcpp shared = random_mcpp(rng, 4);
    GridCkm same(GridSpec{0.0, 0.0, 1.0, 3, 3}, {kBeam});
    for (std::size_t a = 0; a < 9; ++a)
        same.set_mcpp(a, shared);
    const double ref = to_db(rsrp_mean(shared, cfg, kBeam));
    for (int i = 0; i < 20; ++i)
        CHECK(idw_mcpp_query(same, rng.uniform(0, 3), rng.uniform(0, 3), cfg, kBeam) ==
              doctest::Approx(ref).epsilon(1e-10));

    // a path present at only one of two equidistant anchors keeps half its power
    GridCkm partial(GridSpec{0.0, 0.0, 1.0, 2, 1}, {kBeam});
    ScpEntry weak = s1;
    weak.p = s1.p / 100.0;
    partial.set_mcpp(0, Mcpp{{s1, weak}});
    partial.set_mcpp(1, Mcpp{{s1}});
    const Mcpp half = idw_mcpp_interpolate(partial, 1.0, 0.5);
    REQUIRE(half.paths.size() == 2);
    CHECK(rel_err(half.paths[1].p, 0.5 * weak.p) < 1e-12);

    GridCkm empty(GridSpec{0.0, 0.0, 1.0, 2, 1}, {kBeam});
    CHECK_THROWS_AS(idw_mcpp_query(empty, 1.0, 0.5, cfg, kBeam), NoCoverage);
}

TEST_CASE("ckm_from_field")
{
    SiteConfig site;
    site.grid_spacing = 4.0;
    site.ground_reflection = false;
    const McppField f = generate_site(site);
    REQUIRE(f.size() == 4096);
    const ArrayConfig cfg;
    const std::vector<BeamSpec> beams{{0.0, 0.0}, {1.0, -0.5}};

    const GridCkm full = ckm_from_field(f, cfg, beams, 1.0, 3);
    CHECK(full.populated_anchors() == 4096);
    const GridCkm quarter = ckm_from_field(f, cfg, beams, 0.25, 3);
    CHECK(quarter.populated_anchors() == 1024);
    CHECK(ckm_from_field(f, cfg, beams, 0.25, 3) == quarter);
    CHECK_FALSE(ckm_from_field(f, cfg, beams, 0.25, 4) == quarter);

    for (std::size_t a = 0; a < f.size(); a += 97)
        CHECK(*full.mean_db(a, 1) == to_db(rsrp_mean(f.anchors[a], cfg, beams[1])));

    const std::vector<std::size_t> pool{1, 5, 9, 13};
    const GridCkm sub = ckm_from_field(f, cfg, beams, 0.5, 1, pool);
    CHECK(sub.populated_anchors() == 2);
    for (std::size_t a = 0; a < f.size(); ++a)
        if (sub.mean_db(a, 0))
            CHECK(std::find(pool.begin(), pool.end(), a) != pool.end());

    CHECK_THROWS_AS(ckm_from_field(f, cfg, beams, 0.0, 1), std::invalid_argument);
}

TEST_CASE("persistence round trip and byte accounting")
{
    Rng rng(77);
    GridCkm ckm(GridSpec{1.0, 2.0, 0.5, 9, 7}, {{0.1, 0.2}, {-0.3, 0.4}}, 1234.5);
    double t = 0.0;
    for (int i = 0; i < 40; ++i)
    {
        Measurement m = at(rng.uniform(1.0, 5.5), rng.uniform(2.0, 5.5), rng.uniform(-90, -40), rng.uniform(0, 1));
        m.beam = i % 2 ? BeamSpec{0.1, 0.2} : BeamSpec{-0.3, 0.4};
        t += rng.uniform(0, 500);
        ckm.ingest(m, t);
    }
    std::ostringstream os;
    ckm.write(os);
    CHECK(os.str().size() == ckm.serialized_bytes());

    std::istringstream is(os.str());
    const GridCkm back = GridCkm::read(is);
    CHECK(back == ckm);

    const auto path = std::filesystem::temp_directory_path() / "nbf_ckm_roundtrip.csv";
    {
        std::ofstream out(path, std::ios::binary);
        ckm.write(out);
    }
    CHECK(std::filesystem::file_size(path) == ckm.serialized_bytes());
    std::filesystem::remove(path);

    std::istringstream bad("#grid,0,0,1,2,2,10,0\nix,iy,beam_idx,mean_db,weight_total,last_update_s\n0,0,3,1,1,1\n");
    CHECK_THROWS_AS(GridCkm::read(bad), std::invalid_argument);
}
