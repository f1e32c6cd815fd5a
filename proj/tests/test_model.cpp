// SPDX-License-Identifier: Apache-2.0
#include "nbf/model.hpp"
#include "nbf/whitebox.hpp"

#include "gradcheck.hpp"
#include "test_util.hpp"

#include <doctest.h>

using namespace nbf;
using namespace nbf::testing;

namespace
{

NbfConfig tiny_config(std::uint64_t seed = 1)
{
    NbfConfig c;
    c.d_model = 16;
    c.n_blocks = 1;
    c.n_heads = 2;
    c.mlp_ratio = 2;
    c.paths = 2;
    c.p_db_mean = -80.0;
    c.p_db_std = 8.0;
    c.seed = seed;
    return c;
}

std::vector<Position> random_positions(Rng &rng, std::size_t n)
{
    std::vector<Position> p(n);
    for (auto &x : p)
        x = {rng.uniform(-1, 1), rng.uniform(-1, 1)};
    return p;
}

std::vector<BeamSpec> some_beams(Rng &rng, std::size_t n)
{
    std::vector<BeamSpec> b(n);
    for (auto &x : b)
        x = random_beam(rng);
    return b;
}

std::size_t expected_nbf_params(const NbfConfig &c)
{
    const std::size_t d = c.d_model, r = c.mlp_ratio, L = c.paths;
    const std::size_t block = 4 * d + (d * 3 * d + 3 * d) + (d * d + d) + (d * r * d + r * d) + (r * d * d + d);
    return (d * d + d) + L * d + c.n_blocks * block + 2 * d + (d * d + d) + (8 * d + 8) + (d + 1);
}

} // namespace

TEST_CASE("fourier embedding")
{
    NbfConfig cfg;
    const NbfModel m(cfg, ArrayConfig{});
    const std::vector<Position> origin{{0.0, 0.0}};
    const auto e = m.fourier_embed(origin);
    REQUIRE(e.size() == 256);
    for (std::size_t i = 0; i < 128; ++i)
    {
        CHECK(e[i] == 0.0);
        CHECK(e[128 + i] == 1.0);
    }
    const std::vector<Position> twice{{0.3, -0.7}, {0.3, -0.7}};
    const auto e2 = m.fourier_embed(twice);
    CHECK(std::equal(e2.begin(), e2.begin() + 256, e2.begin() + 256));
    CHECK(m.fourier_matrix().size() == 256);
}

TEST_CASE("forward_mcpp shapes and invariants")
{
    NbfConfig cfg = tiny_config();
    cfg.paths = 10;
    const NbfModel m(cfg, ArrayConfig{});
    Rng rng(3);
    const auto pos = random_positions(rng, 5);
    const McppPrediction a = m.forward_mcpp(pos);
    CHECK(a.features.shape() == ad::Shape{5, 11, 16});
    CHECK(a.u_tx.shape() == ad::Shape{5, 10, 3});
    CHECK(a.logits.shape() == ad::Shape{5, 10});
    for (std::size_t i = 0; i < 50; ++i)
    {
        for (const ad::Tensor *u : {&a.u_tx, &a.u_rx})
        {
            const double *v = u->value().data() + 3 * i;
            CHECK(std::abs(std::sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2]) - 1.0) < 1e-6);
        }
        CHECK(a.tau_norm.value()[i] > 0.0);
        CHECK(a.tau_norm.value()[i] < 1.0);
        CHECK(a.p.value()[i] > 0.0);
    }
    const McppPrediction b = m.forward_mcpp(pos);
    CHECK(a.u_tx.value() == b.u_tx.value());
    CHECK(a.p.value() == b.p.value());
    CHECK(a.features.value() == b.features.value());
}

TEST_CASE("nbf output follows the whitebox")
{
    NbfConfig cfg = tiny_config();
    cfg.paths = 1;
    const ArrayConfig arr;
    NbfModel m(cfg, arr);

    // zero the head weights so the biases alone define the path
    Rng rng(5);
    ScpEntry s = random_scp(rng);
    s.u_tx = normalized(Vec3{1.0, 0.2, -0.3});
    auto &w2 = const_cast<ad::Tensor &>(m.param("reg.fc2.w")).mutable_value();
    std::fill(w2.begin(), w2.end(), 0.0);
    auto &b2 = const_cast<ad::Tensor &>(m.param("reg.fc2.b")).mutable_value();
    b2 = {s.u_tx.x, s.u_tx.y, s.u_tx.z, s.u_rx.x, s.u_rx.y, s.u_rx.z, 0.0,
          (10.0 * std::log10(s.p) - cfg.p_db_mean) / cfg.p_db_std};
    auto &wc = const_cast<ad::Tensor &>(m.param("cls.w")).mutable_value();
    std::fill(wc.begin(), wc.end(), 0.0);
    auto &bc = const_cast<ad::Tensor &>(m.param("cls.b")).mutable_value();

    const std::vector<Position> pos{{0.1, 0.4}, {-0.5, 0.9}};
    const auto beams = some_beams(rng, 6);
    bc[0] = 40.0;
    const ad::Tensor db = m.predict_db(pos, beams, true);
    for (std::size_t b = 0; b < 2; ++b)
        for (std::size_t k = 0; k < beams.size(); ++k)
        {
            const double expect = to_db(path_gain(s, arr, beams[k]).gamma);
            CHECK(db.value()[b * beams.size() + k] == doctest::Approx(expect).epsilon(1e-9));
        }

    bc[0] = -60.0;
    const ad::Tensor soft_off = m.predict_db(pos, beams, true);
    const ad::Tensor hard_off = m.predict_db(pos, beams, false);
    for (std::size_t i = 0; i < soft_off.size(); ++i)
    {
        CHECK(soft_off.value()[i] == doctest::Approx(to_db(0.0)).epsilon(1e-9));
        CHECK(hard_off.value()[i] == to_db(0.0));
    }
}

TEST_CASE("beams are evaluated from one MCPP prediction")
{
    const NbfModel m(tiny_config(), ArrayConfig{});
    Rng rng(8);
    const auto pos = random_positions(rng, 3);
    const auto beams = some_beams(rng, 5);
    const McppPrediction pred = m.forward_mcpp(pos);
    const ad::Tensor all = m.rsrp_db(pred, beams, false);
    for (std::size_t k = 0; k < beams.size(); ++k)
    {
        const std::vector<BeamSpec> one{beams[k]};
        const ad::Tensor single = m.predict_db(pos, one, false);
        for (std::size_t b = 0; b < pos.size(); ++b)
            CHECK(single.value()[b] == all.value()[b * beams.size() + k]);
    }
    // hard-gated prediction equals the whitebox on the extracted MCPP
    for (std::size_t b = 0; b < pos.size(); ++b)
    {
        const Mcpp mc = pred.mcpp(b, m.config().tau_max);
        for (std::size_t k = 0; k < beams.size(); ++k)
            CHECK(all.value()[b * beams.size() + k] ==
                  doctest::Approx(to_db(rsrp_mean(mc, m.array(), beams[k]))).epsilon(1e-12));
    }
}

TEST_CASE("nbf gradient matches finite differences")
{
    for (std::uint64_t seed = 1; seed <= 5; ++seed)
    {
        Rng rng(seed * 13);
        ArrayConfig arr = random_array(rng, true);
        const NbfModel m(tiny_config(seed), arr);
        const auto pos = random_positions(rng, 2);
        const auto beams = some_beams(rng, 3);
        const GradCheck r = gradcheck([&] { return m.predict_db(pos, beams, true); }, m.trainable(), seed);
        INFO("seed " << seed << " max rel " << r.max_rel << " over " << r.checked);
        CHECK(r.checked == m.parameter_count());
        CHECK(r.max_rel < 1e-5);
    }
}

TEST_CASE("parameter count is exact")
{
    for (const NbfConfig &c : {tiny_config(), NbfConfig{}})
    {
        const NbfModel m(c, ArrayConfig{});
        CHECK(m.parameter_count() == expected_nbf_params(c));
    }
    NbfConfig c = tiny_config();
    c.n_blocks = 3;
    CHECK(NbfModel(c, ArrayConfig{}).parameter_count() == expected_nbf_params(c));

    const MlpConfig mc = MlpConfig::sized_for(50000, 3);
    CHECK(mc.parameter_count() >= 50000);
    MlpConfig smaller = mc;
    for (int &h : smaller.hidden)
        --h;
    CHECK(smaller.parameter_count() < 50000);
    CHECK(MlpModel(mc).parameter_count() == mc.parameter_count());
}

TEST_CASE("mlp baseline")
{
    MlpConfig cfg;
    cfg.hidden = {5, 4};
    const MlpModel m(cfg);
    const Checkpoint ck = m.to_checkpoint();
    CHECK(ck.at("fc0.w").shape == ad::Shape{6, 5});

    Rng rng(2);
    const auto pos = random_positions(rng, 3);
    const auto beams = some_beams(rng, 4);
    const ad::Tensor a = m.predict_db(pos, beams, false);
    CHECK(a.shape() == ad::Shape{3, 4});
    CHECK(a.value() == m.predict_db(pos, beams, false).value());

    for (std::uint64_t seed = 1; seed <= 5; ++seed)
    {
        MlpConfig c2 = cfg;
        c2.seed = seed;
        const MlpModel mm(c2);
        const GradCheck r = gradcheck([&] { return mm.predict_db(pos, beams, true); }, mm.trainable(), seed);
        INFO("seed " << seed << " max rel " << r.max_rel);
        CHECK(r.max_rel < 1e-5);
    }
}

TEST_CASE("checkpoint round trip gives identical predictions")
{
    Rng rng(4);
    const auto pos = random_positions(rng, 4);
    const auto beams = some_beams(rng, 3);

    const NbfModel nbf(tiny_config(7), random_array(rng, true));
    const auto loaded = load_model(parse_checkpoint(serialize_checkpoint(nbf.to_checkpoint())));
    CHECK(loaded->kind() == "nbf");
    CHECK(loaded->predict_db(pos, beams, false).value() == nbf.predict_db(pos, beams, false).value());
    CHECK(loaded->predict_db(pos, beams, true).value() == nbf.predict_db(pos, beams, true).value());
    CHECK(serialize_checkpoint(loaded->to_checkpoint()) == serialize_checkpoint(nbf.to_checkpoint()));

    MlpConfig mc;
    mc.hidden = {7, 7};
    const MlpModel mlp(mc);
    const auto mlp2 = load_model(parse_checkpoint(serialize_checkpoint(mlp.to_checkpoint())));
    CHECK(mlp2->kind() == "mlp");
    CHECK(mlp2->predict_db(pos, beams, false).value() == mlp.predict_db(pos, beams, false).value());

    Checkpoint bad = nbf.to_checkpoint();
    bad.meta["kind"] = "other";
    CHECK_THROWS_AS(load_model(bad), std::invalid_argument);
}

TEST_CASE("clone is independent")
{
    const NbfModel a(tiny_config(), ArrayConfig{});
    NbfModel b = a.clone();
    const std::vector<Position> pos{{0.2, 0.2}};
    const std::vector<BeamSpec> beams{{0.0, 0.0}};
    CHECK(a.predict_db(pos, beams, true).value() == b.predict_db(pos, beams, true).value());
    const_cast<ad::Tensor &>(b.param("cls.b")).mutable_value()[0] += 1.0;
    CHECK(a.predict_db(pos, beams, true).value() != b.predict_db(pos, beams, true).value());
}

TEST_CASE("config validation")
{
    NbfConfig c = tiny_config();
    c.n_heads = 3;
    CHECK_THROWS_AS(NbfModel(c, ArrayConfig{}), std::invalid_argument);
    c = tiny_config();
    c.d_model = 15;
    CHECK_THROWS_AS(NbfModel(c, ArrayConfig{}), std::invalid_argument);
    c = tiny_config();
    c.paths = 0;
    CHECK_THROWS_AS(NbfModel(c, ArrayConfig{}), std::invalid_argument);

    nlohmann::json j = tiny_config();
    CHECK(j.get<NbfConfig>() == tiny_config());
    j["typo"] = 1;
    CHECK_THROWS_AS(j.get<NbfConfig>(), std::invalid_argument);
}
