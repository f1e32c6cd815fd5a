// SPDX-License-Identifier: Apache-2.0
#include "nbf/train.hpp"
#include "nbf/whitebox.hpp"

#include "gradcheck.hpp"
#include "test_util.hpp"

#include <doctest.h>

#include <algorithm>
#include <numeric>
#include <sstream>

using namespace nbf;
using namespace nbf::testing;

namespace
{

NbfConfig small_config(std::uint64_t seed = 3)
{
    NbfConfig c;
    c.d_model = 16;
    c.n_blocks = 1;
    c.n_heads = 2;
    c.mlp_ratio = 2;
    c.paths = 3;
    c.p_db_mean = -90.0;
    c.p_db_std = 10.0;
    c.seed = seed;
    return c;
}

ArrayConfig small_array() { return ArrayConfig::half_wavelength(4, 2, 3.5e9, {0.0, 0.2, 0.0}, ErpConfig{}); }

// Exhaustive minimum over all injective maps of min(n, m) pairs.
double brute_force(const std::vector<double> &c, std::size_t n, std::size_t m)
{
    double best = std::numeric_limits<double>::infinity();
    if (n <= m)
    {
        std::vector<std::size_t> perm(m);
        std::iota(perm.begin(), perm.end(), 0);
        do
        {
            double s = 0.0;
            for (std::size_t i = 0; i < n; ++i)
                s += c[i * m + perm[i]];
            best = std::min(best, s);
        } while (std::next_permutation(perm.begin(), perm.end()));
    }
    else
    {
        std::vector<std::size_t> perm(n);
        std::iota(perm.begin(), perm.end(), 0);
        do
        {
            double s = 0.0;
            for (std::size_t j = 0; j < m; ++j)
                s += c[perm[j] * m + j];
            best = std::min(best, s);
        } while (std::next_permutation(perm.begin(), perm.end()));
    }
    return best;
}

void check_valid(const MatchResult &r, std::size_t n, std::size_t m)
{
    std::vector<int> used(m, 0);
    std::size_t matched = 0;
    for (int j : r.assignment)
        if (j >= 0)
        {
            REQUIRE(static_cast<std::size_t>(j) < m);
            CHECK(used[static_cast<std::size_t>(j)]++ == 0);
            ++matched;
        }
    CHECK(matched == std::min(n, m));
    CHECK(r.unmatched_rows.size() == n - matched);
}

AnchorSample sample_at(double x, double y, const Mcpp &m, const ArrayConfig &cfg, std::span<const BeamSpec> beams)
{
    AnchorSample s;
    s.x = x;
    s.y = y;
    s.mcpp = m;
    for (const auto &b : beams)
        s.rsrp_db.push_back(to_db(rsrp_mean(m, cfg, b)));
    return s;
}

} // namespace

TEST_CASE("smooth l1 and bce examples")
{
    CHECK(smooth_l1(2.0, 1.0) == 1.5);
    CHECK(smooth_l1(0.5, 1.0) == 0.125);
    CHECK(smooth_l1(-2.0, 1.0) == 1.5);
    CHECK(smooth_l1(1.0, 1.0) == 0.5); // continuous at the knee
    const double z0[] = {0.0}, t1[] = {1.0}, t0[] = {0.0};
    CHECK(bce_existence(z0, t1) == doctest::Approx(std::log(2.0)).epsilon(1e-15));
    const double z20[] = {20.0}, zm20[] = {-20.0};
    CHECK(bce_existence(z20, t1) <= 1e-8);
    CHECK(bce_existence(z20, t0) == doctest::Approx(20.0).epsilon(1e-8));
    // Swapping label and sign of the logit leaves the loss unchanged.
    Rng rng(5);
    for (int i = 0; i < 100; ++i)
    {
        const double z[] = {rng.uniform(-30, 30)}, mz[] = {-z[0]};
        CHECK(bce_existence(z, t1) == bce_existence(mz, t0));
    }
    CHECK(bce_existence(zm20, t0) <= 1e-8);
    CHECK_THROWS(bce_existence(z0, std::span<const double>{}));
}

TEST_CASE("hungarian matches brute force on square matrices")
{
    Rng rng(11);
    for (int trial = 0; trial < 200; ++trial)
    {
        const std::size_t n = 7;
        std::vector<double> c(n * n);
        for (double &x : c)
            x = rng.uniform(0, 10);
        const MatchResult r = hungarian(c, n, n);
        check_valid(r, n, n);
        CHECK(r.cost == doctest::Approx(brute_force(c, n, n)).epsilon(1e-12));
    }
}

TEST_CASE("hungarian matches brute force on rectangular matrices")
{
    Rng rng(12);
    for (int trial = 0; trial < 100; ++trial)
    {
        const std::size_t n = 1 + rng.below(8), m = 1 + rng.below(8);
        std::vector<double> c(n * m);
        for (double &x : c)
            x = rng.uniform(0, 10);
        const MatchResult r = hungarian(c, n, m);
        check_valid(r, n, m);
        CHECK(r.cost == doctest::Approx(brute_force(c, n, m)).epsilon(1e-12));
    }
}

TEST_CASE("hungarian examples and ties")
{
    const std::vector<double> anti{0, 1, 1, 0};
    CHECK(hungarian(anti, 2, 2).assignment == std::vector<int>{0, 1});
    const std::vector<double> cross{1, 0, 0, 1};
    CHECK(hungarian(cross, 2, 2).assignment == std::vector<int>{1, 0});
    // All-equal costs: every assignment is optimal; lowest indices win.
    const std::vector<double> flat(12, 1.0);
    CHECK(hungarian(flat, 3, 4).assignment == std::vector<int>{0, 1, 2});
    const auto r = hungarian(flat, 4, 3);
    CHECK(r.assignment == std::vector<int>{0, 1, 2, -1});
    CHECK(r.unmatched_rows == std::vector<std::size_t>{3});
    // Tie between row 0 taking column 0 or 1.
    const std::vector<double> tie{1, 1, 5, 1, 1, 5};
    CHECK(hungarian(tie, 2, 3).assignment == std::vector<int>{0, 1});
    CHECK(hungarian(std::vector<double>{}, 0, 3).assignment.empty());
    CHECK(hungarian(std::vector<double>{}, 2, 0).unmatched_rows.size() == 2);
    CHECK_THROWS(hungarian(std::vector<double>{1.0, 2.0}, 2, 2));
}

TEST_CASE("match cost properties")
{
    const NbfConfig cfg = small_config();
    const NbfModel model(cfg, small_array());
    const std::vector<Position> pos{{0.1, -0.3}};
    const McppPrediction pred = model.forward_mcpp(pos);
    Rng rng(2);
    Mcpp label = random_mcpp(rng, 4);
    const auto c = match_cost(pred, 0, label, cfg, 1.0, 1.0);
    REQUIRE(c.size() == 3 * 4);
    for (double v : c)
        CHECK(v >= 0.0);
    // A label equal to the prediction's own path costs only the existence term.
    Mcpp self;
    ScpEntry s;
    s.u_tx = {pred.u_tx.value()[0], pred.u_tx.value()[1], pred.u_tx.value()[2]};
    s.u_rx = {pred.u_rx.value()[0], pred.u_rx.value()[1], pred.u_rx.value()[2]};
    s.tau = pred.tau_norm.value()[0] * cfg.tau_max;
    s.p = pred.p.value()[0];
    self.paths.push_back(s);
    const auto cs = match_cost(pred, 0, self, cfg, 1.0, 1.0);
    const double z = pred.logits.value()[0];
    CHECK(cs[0] == doctest::Approx(1.0 - 1.0 / (1.0 + std::exp(-z))).epsilon(1e-9));
    // w_exist shifts every row by its own constant.
    const auto c0 = match_cost(pred, 0, label, cfg, 0.0, 1.0);
    for (std::size_t i = 0; i < 3; ++i)
        for (std::size_t j = 1; j < 4; ++j)
            CHECK((c[i * 4 + j] - c0[i * 4 + j]) == doctest::Approx(c[i * 4] - c0[i * 4]).epsilon(1e-12));
}

TEST_CASE("pretrain loss gradient")
{
    const NbfConfig cfg = small_config(7);
    const NbfModel model(cfg, small_array());
    Rng rng(9);
    const std::vector<Position> pos{{0.2, 0.4}, {-0.5, 0.1}};
    const std::vector<Mcpp> labels{random_mcpp(rng, 2), random_mcpp(rng, 4)};
    TrainConfig tc;
    const auto base = pretrain_loss(model, pos, labels, tc);
    CHECK(base.matched == 2 + 3);
    CHECK(base.total.item() == doctest::Approx(base.l_cls + tc.lambda_reg * base.l_reg).epsilon(1e-14));
    for (std::uint64_t seed = 1; seed <= 3; ++seed)
    {
        const auto g = gradcheck([&] { return pretrain_loss(model, pos, labels, tc).total; }, model.trainable(),
                                 seed, 1e-6, 12);
        CHECK(g.max_rel < 1e-5);
    }
}

TEST_CASE("pretrain loss ignores label order and path-free samples")
{
    const NbfConfig cfg = small_config(4);
    const NbfModel model(cfg, small_array());
    Rng rng(10);
    const std::vector<Position> pos{{0.3, -0.7}};
    Mcpp lab = random_mcpp(rng, 3);
    TrainConfig tc;
    const double l0 = pretrain_loss(model, pos, std::vector<Mcpp>{lab}, tc).total.item();
    std::reverse(lab.paths.begin(), lab.paths.end());
    CHECK(pretrain_loss(model, pos, std::vector<Mcpp>{lab}, tc).total.item() == doctest::Approx(l0).epsilon(1e-14));
    const auto empty = pretrain_loss(model, pos, std::vector<Mcpp>{Mcpp{}}, tc);
    CHECK(empty.matched == 0);
    CHECK(empty.l_reg == 0.0);
}

TEST_CASE("pretraining reduces the set loss")
{
    const ArrayConfig arr = small_array();
    NbfConfig cfg = small_config(5);
    Rng rng(21);
    std::vector<AnchorSample> samples;
    for (int i = 0; i < 16; ++i)
    {
        Mcpp m = random_mcpp(rng, 2);
        for (auto &p : m.paths)
            p.tau = 5e-7;
        samples.push_back(sample_at(rng.uniform(0, 100), rng.uniform(0, 100), m, arr, {}));
    }
    const McppTrainSet set = make_mcpp_set(samples, 100, 100);
    set_power_stats(cfg, set);
    NbfModel model(cfg, arr);
    TrainConfig tc;
    tc.batch_size = 8;
    tc.epochs = 60;
    tc.lr_max = 5e-3;
    const TrainTrace t = pretrain(model, set, tc);
    REQUIRE(t.epoch_loss.size() == 60);
    CHECK(t.epoch_loss.back() < 0.5 * t.epoch_loss.front());
    CHECK(t.part_a_name == "l_cls");
}

TEST_CASE("end-to-end training overfits one anchor")
{
    const ArrayConfig arr = small_array();
    Rng rng(4);
    const std::vector<BeamSpec> beams{{0.3, -0.2}};
    Mcpp m = random_mcpp(rng, 2);
    const auto s = sample_at(40, 60, m, arr, beams);
    const RsrpTrainSet set = make_rsrp_set(std::span(&s, 1), beams, 100, 100);
    CHECK(set.label_std == 1e-3); // a single label has no spread

    NbfConfig cfg = small_config(6);
    cfg.p_db_mean = s.rsrp_db[0] - 3.0;
    NbfModel nbf(cfg, arr);
    TrainConfig tc;
    tc.batch_size = 1;
    tc.epochs = 500;
    tc.lr_max = 1e-2;
    // Unit-scale loss for this test.
    RsrpTrainSet unit = set;
    unit.label_std = 1.0;
    train_e2e(nbf, unit, tc);
    const Position p = unit.pos[0];
    const double err = std::abs(nbf.predict_db(std::span(&p, 1), beams, true).item() - s.rsrp_db[0]);
    CHECK(err < 0.01);

    MlpConfig mc;
    mc.hidden = {16, 16};
    mc.out_mean = s.rsrp_db[0] - 3.0;
    mc.out_std = 1.0;
    MlpModel mlp(mc);
    train_e2e(mlp, unit, tc);
    CHECK(std::abs(mlp.predict_db(std::span(&p, 1), beams, false).item() - s.rsrp_db[0]) < 0.01);
}

TEST_CASE("calibration without feature loss equals end-to-end training")
{
    const ArrayConfig arr = small_array();
    Rng rng(8);
    const std::vector<BeamSpec> beams{{0.1, 0.0}, {-1.0, 0.4}};
    std::vector<AnchorSample> samples;
    for (int i = 0; i < 6; ++i)
        samples.push_back(sample_at(rng.uniform(0, 50), rng.uniform(0, 50), random_mcpp(rng, 3), arr, beams));
    const RsrpTrainSet set = make_rsrp_set(samples, beams, 50, 50);
    NbfConfig cfg = small_config(2);
    set_power_stats(cfg, set);
    const NbfModel ref(cfg, arr);
    NbfModel a = ref.clone(), b = ref.clone();
    TrainConfig tc;
    tc.batch_size = 4;
    tc.epochs = 5;
    tc.lambda_feat = 0.0;
    const auto ta = train_e2e(a, set, tc);
    const auto tb = calibrate(b, ref, set, tc);
    REQUIRE(ta.rows.size() == tb.rows.size());
    for (std::size_t i = 0; i < ta.rows.size(); ++i)
        CHECK(ta.rows[i].loss == tb.rows[i].loss);
    for (std::size_t i = 0; i < a.named_parameters().size(); ++i)
        CHECK(a.named_parameters()[i].second.value() == b.named_parameters()[i].second.value());

    // A heavy feature penalty keeps the final tokens near the reference.
    NbfModel c = ref.clone();
    tc.lambda_feat = 1e6;
    const auto tcal = calibrate(c, ref, set, tc);
    CHECK(tcal.rows.front().part_b == 0.0); // starts at the reference
    const std::vector<Position> probe{set.pos[0]};
    const auto fa = a.forward_mcpp(probe).features.value();
    const auto fc = c.forward_mcpp(probe).features.value();
    const auto fr = ref.forward_mcpp(probe).features.value();
    double da = 0.0, dc = 0.0;
    for (std::size_t i = 0; i < fr.size(); ++i)
    {
        da += (fa[i] - fr[i]) * (fa[i] - fr[i]);
        dc += (fc[i] - fr[i]) * (fc[i] - fr[i]);
    }
    CHECK(dc < 0.1 * da);
}

TEST_CASE("training is deterministic and traces are written")
{
    const ArrayConfig arr = small_array();
    Rng rng(13);
    const std::vector<BeamSpec> beams{{0.5, 0.0}};
    std::vector<AnchorSample> samples;
    for (int i = 0; i < 5; ++i)
        samples.push_back(sample_at(rng.uniform(0, 50), rng.uniform(0, 50), random_mcpp(rng, 2), arr, beams));
    const RsrpTrainSet set = make_rsrp_set(samples, beams, 50, 50);
    MlpConfig mc;
    mc.hidden = {8};
    mc.out_mean = set.label_mean;
    mc.out_std = set.label_std;
    MlpModel m1(mc), m2(mc);
    TrainConfig tc;
    tc.batch_size = 2;
    tc.epochs = 3;
    tc.max_steps = 7;
    const auto t1 = train_e2e(m1, set, tc);
    const auto t2 = train_e2e(m2, set, tc);
    REQUIRE(t1.rows.size() == 7);
    CHECK(t1.rows.back().epoch == 2);
    for (std::size_t i = 0; i < 7; ++i)
        CHECK(t1.rows[i].loss == t2.rows[i].loss);
    std::ostringstream os;
    t1.write_csv(os);
    CHECK(os.str().rfind("step,epoch,lr,loss,l_rsrp,l_feat\n", 0) == 0);
    TrainConfig bad;
    bad.batch_size = 0;
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
    nlohmann::json j = tc;
    CHECK(j.get<TrainConfig>() == tc);
    j["bogus"] = 1;
    CHECK_THROWS(j.get<TrainConfig>());
}

TEST_CASE("error metrics examples")
{
    const std::vector<double> pred{1, 2, 3, 4}, lab{0, 2, 5, 4};
    const Metrics m = error_metrics(pred, lab, 2);
    CHECK(m.mae_db == 0.75);
    CHECK(m.rmse_db == doctest::Approx(std::sqrt(5.0 / 4.0)).epsilon(1e-15));
    CHECK(m.per_beam_mae == std::vector<double>{1.5, 0.0});
    CHECK(m.samples == 4);
    CHECK_THROWS(error_metrics(pred, std::vector<double>{1.0}, 2));

    // A perfect predictor evaluates to zero error.
    std::vector<AnchorSample> s(3);
    for (std::size_t i = 0; i < 3; ++i)
    {
        s[i].x = static_cast<double>(i);
        s[i].rsrp_db = {-70.0 - static_cast<double>(i)};
    }
    const Metrics z = evaluate([](double x, double) { return std::vector<double>{-70.0 - x}; }, s, 1);
    CHECK(z.mae_db == 0.0);
    CHECK(z.inference_ms >= 0.0);
}
