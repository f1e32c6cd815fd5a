// SPDX-License-Identifier: Apache-2.0
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
// http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.
// ------------------------------------------------------------------------

#include "nbf/train.hpp"

#include "nbf/optim.hpp"
#include "nbf/rng.hpp"
#include "nbf/whitebox.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <numeric>
#include <ostream>
#include <stdexcept>

namespace nbf
{

using ad::Tensor;

void TrainConfig::validate() const
{
    auto fail = [](const std::string &m) { throw std::invalid_argument("train: " + m); };
    if (!(lambda_reg >= 0.0) || !(lambda_feat >= 0.0))
        fail("loss weights must be non-negative");
    if (batch_size < 1)
        fail("batch_size must be at least 1");
    if (epochs < 1)
        fail("epochs must be at least 1");
    if (!(lr_max > 0.0))
        fail("lr_max must be positive");
    if (!(pct_start > 0.0 && pct_start < 1.0))
        fail("pct_start must lie in (0, 1)");
    if (!(div_factor >= 1.0) || !(final_div_factor >= 1.0))
        fail("div factors must be at least 1");
    if (!(smooth_l1_beta > 0.0))
        fail("smooth_l1_beta must be positive");
    if (!(w_exist >= 0.0))
        fail("w_exist must be non-negative");
    if (!(gate_sharpness_final >= 1.0))
        fail("gate_sharpness_final must be at least 1");
    if (!(exist_smoothing >= 0.0 && exist_smoothing < 0.5))
        fail("exist_smoothing must lie in [0, 0.5)");
    if (!(gate_sharpness_initial > 0.0))
        fail("gate_sharpness_initial must be positive");
    if (!(grad_clip >= 0.0))
        fail("grad_clip must be non-negative");
}

void to_json(nlohmann::json &j, const TrainConfig &c)
{
    j = {{"lambda_reg", c.lambda_reg},
         {"lambda_feat", c.lambda_feat},
         {"batch_size", c.batch_size},
         {"epochs", c.epochs},
         {"max_steps", c.max_steps},
         {"lr_max", c.lr_max},
         {"pct_start", c.pct_start},
         {"div_factor", c.div_factor},
         {"final_div_factor", c.final_div_factor},
         {"smooth_l1_beta", c.smooth_l1_beta},
         {"w_exist", c.w_exist},
         {"exist_smoothing", c.exist_smoothing},
         {"gate_sharpness_initial", c.gate_sharpness_initial},
         {"gate_sharpness_final", c.gate_sharpness_final},
         {"grad_clip", c.grad_clip},
         {"seed", c.seed}};
}

void from_json(const nlohmann::json &j, TrainConfig &c)
{
    if (!j.is_object())
        throw std::invalid_argument("train: expected an object");
    for (const auto &item : j.items())
    {
        const std::string &k = item.key();
        const auto &v = item.value();
        if (k == "lambda_reg")
            v.get_to(c.lambda_reg);
        else if (k == "lambda_feat")
            v.get_to(c.lambda_feat);
        else if (k == "batch_size")
            v.get_to(c.batch_size);
        else if (k == "epochs")
            v.get_to(c.epochs);
        else if (k == "max_steps")
            v.get_to(c.max_steps);
        else if (k == "lr_max")
            v.get_to(c.lr_max);
        else if (k == "pct_start")
            v.get_to(c.pct_start);
        else if (k == "div_factor")
            v.get_to(c.div_factor);
        else if (k == "final_div_factor")
            v.get_to(c.final_div_factor);
        else if (k == "smooth_l1_beta")
            v.get_to(c.smooth_l1_beta);
        else if (k == "w_exist")
            v.get_to(c.w_exist);
        else if (k == "exist_smoothing")
            v.get_to(c.exist_smoothing);
        else if (k == "gate_sharpness_initial")
            v.get_to(c.gate_sharpness_initial);
        else if (k == "gate_sharpness_final")
            v.get_to(c.gate_sharpness_final);
        else if (k == "grad_clip")
            v.get_to(c.grad_clip);
        else if (k == "seed")
            v.get_to(c.seed);
        else
            throw std::invalid_argument("train: unknown key \"" + k + "\"");
    }
}

double smooth_l1(double e, double beta)
{
    const double a = std::abs(e);
    return a < beta ? 0.5 * e * e / beta : a - 0.5 * beta;
}

double smooth_l1(std::span<const double> pred, std::span<const double> target, double beta)
{
    if (pred.size() != target.size() || pred.empty())
        throw std::invalid_argument("smooth_l1: size mismatch or empty input");
    double s = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i)
        s += smooth_l1(pred[i] - target[i], beta);
    return s / static_cast<double>(pred.size());
}

double bce_existence(std::span<const double> logits, std::span<const double> targets)
{
    if (logits.size() != targets.size() || logits.empty())
        throw std::invalid_argument("bce: size mismatch or empty input");
    double s = 0.0;
    for (std::size_t i = 0; i < logits.size(); ++i)
    {
        const double z = logits[i];
        s += std::max(z, 0.0) - z * targets[i] + std::log1p(std::exp(-std::abs(z)));
    }
    return s / static_cast<double>(logits.size());
}

// ---------------------------------------------------------------- matching

namespace
{

// Shortest augmenting path with potentials; requires n <= m. Returns the
// column of every row.
std::vector<int> assign_rows(const std::vector<double> &a, std::size_t n, std::size_t m)
{
    const double inf = std::numeric_limits<double>::infinity();
    std::vector<double> u(n + 1, 0.0), v(m + 1, 0.0);
    std::vector<std::size_t> p(m + 1, 0), way(m + 1, 0);
    for (std::size_t i = 1; i <= n; ++i)
    {
        p[0] = i;
        std::size_t j0 = 0;
        std::vector<double> minv(m + 1, inf);
        std::vector<char> used(m + 1, 0);
        do
        {
            used[j0] = 1;
            const std::size_t i0 = p[j0];
            double delta = inf;
            std::size_t j1 = 0;
            for (std::size_t j = 1; j <= m; ++j)
            {
                if (used[j])
                    continue;
                const double cur = a[(i0 - 1) * m + (j - 1)] - u[i0] - v[j];
                if (cur < minv[j])
                {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if (minv[j] < delta)
                {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for (std::size_t j = 0; j <= m; ++j)
            {
                if (used[j])
                {
                    u[p[j]] += delta;
                    v[j] -= delta;
                }
                else
                    minv[j] -= delta;
            }
            j0 = j1;
        } while (p[j0] != 0);
        do
        {
            const std::size_t j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
        } while (j0 != 0);
    }
    std::vector<int> col(n, -1);
    for (std::size_t j = 1; j <= m; ++j)
        if (p[j] != 0)
            col[p[j] - 1] = static_cast<int>(j - 1);
    return col;
}

// Optimal cost restricted to the given rows and columns.
double optimal_cost(std::span<const double> cost, std::size_t m, const std::vector<std::size_t> &rows,
                    const std::vector<std::size_t> &cols)
{
    if (rows.empty() || cols.empty())
        return 0.0;
    const bool flip = rows.size() > cols.size();
    const std::size_t n2 = flip ? cols.size() : rows.size();
    const std::size_t m2 = flip ? rows.size() : cols.size();
    std::vector<double> a(n2 * m2);
    for (std::size_t r = 0; r < rows.size(); ++r)
        for (std::size_t c = 0; c < cols.size(); ++c)
        {
            const double x = cost[rows[r] * m + cols[c]];
            if (flip)
                a[c * m2 + r] = x;
            else
                a[r * m2 + c] = x;
        }
    const std::vector<int> col = assign_rows(a, n2, m2);
    double s = 0.0;
    for (std::size_t i = 0; i < n2; ++i)
        s += a[i * m2 + static_cast<std::size_t>(col[i])];
    return s;
}

} // namespace

MatchResult hungarian(std::span<const double> cost, std::size_t n, std::size_t m)
{
    if (cost.size() != n * m)
        throw std::invalid_argument("hungarian: cost has " + std::to_string(cost.size()) + " entries, expected " +
                                    std::to_string(n) + "x" + std::to_string(m));
    for (double c : cost)
        if (!std::isfinite(c))
            throw std::invalid_argument("hungarian: non-finite cost");

    MatchResult r;
    r.assignment.assign(n, -1);
    std::vector<std::size_t> rows(n), cols(m);
    std::iota(rows.begin(), rows.end(), 0);
    std::iota(cols.begin(), cols.end(), 0);
    const double best = optimal_cost(cost, m, rows, cols);
    const double tol = 1e-9 * (1.0 + std::abs(best));

    // Greedy lexicographic refinement: fix rows in order to the smallest
    // column (unmatched last) that still admits an optimal completion.
    const std::size_t k = std::min(n, m);
    double fixed = 0.0;
    std::size_t placed = 0;
    std::vector<std::size_t> rest_cols = cols;
    for (std::size_t i = 0; i < n; ++i)
    {
        std::vector<std::size_t> rest_rows(rows.begin() + static_cast<std::ptrdiff_t>(i) + 1, rows.end());
        bool done = false;
        for (std::size_t ci = 0; ci < rest_cols.size() && !done; ++ci)
        {
            std::vector<std::size_t> rc = rest_cols;
            rc.erase(rc.begin() + static_cast<std::ptrdiff_t>(ci));
            // The completion must still reach a full-size assignment.
            if (placed + 1 + std::min(rest_rows.size(), rc.size()) < k)
                continue;
            const double c = fixed + cost[i * m + rest_cols[ci]] + optimal_cost(cost, m, rest_rows, rc);
            if (c <= best + tol)
            {
                r.assignment[i] = static_cast<int>(rest_cols[ci]);
                fixed += cost[i * m + rest_cols[ci]];
                ++placed;
                rest_cols = std::move(rc);
                done = true;
            }
        }
        if (!done)
            r.unmatched_rows.push_back(i);
    }
    r.cost = 0.0;
    for (std::size_t i = 0; i < n; ++i)
        if (r.assignment[i] >= 0)
            r.cost += cost[i * m + static_cast<std::size_t>(r.assignment[i])];
    return r;
}

std::array<double, 8> path_features(const ScpEntry &s, const NbfConfig &cfg)
{
    return {s.u_tx[0], s.u_tx[1], s.u_tx[2], s.u_rx[0], s.u_rx[1], s.u_rx[2], s.tau / cfg.tau_max,
            (to_db(s.p) - cfg.p_db_mean) / cfg.p_db_std};
}

namespace
{

std::array<double, 8> predicted_features(const McppPrediction &pred, std::size_t flat)
{
    const auto &ut = pred.u_tx.value();
    const auto &ur = pred.u_rx.value();
    return {ut[3 * flat],     ut[3 * flat + 1], ut[3 * flat + 2],           ur[3 * flat],
            ur[3 * flat + 1], ur[3 * flat + 2], pred.tau_norm.value()[flat], pred.p_z.value()[flat]};
}

double sigmoid(double z) { return z >= 0.0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z)); }

} // namespace

std::vector<double> match_cost(const McppPrediction &pred, std::size_t b, const Mcpp &label, const NbfConfig &cfg,
                               double w_exist, double beta)
{
    const std::size_t L = pred.paths, m = label.paths.size();
    std::vector<std::array<double, 8>> lf(m);
    for (std::size_t j = 0; j < m; ++j)
        lf[j] = path_features(label.paths[j], cfg);
    std::vector<double> c(L * m);
    for (std::size_t i = 0; i < L; ++i)
    {
        const std::size_t flat = b * L + i;
        const auto pf = predicted_features(pred, flat);
        const double ex = w_exist * (1.0 - sigmoid(pred.logits.value()[flat]));
        for (std::size_t j = 0; j < m; ++j)
        {
            double s = 0.0;
            for (std::size_t f = 0; f < 8; ++f)
                s += smooth_l1(pf[f] - lf[j][f], beta);
            c[i * m + j] = s / 8.0 + ex;
        }
    }
    return c;
}

// ---------------------------------------------------------------- datasets

RsrpTrainSet make_rsrp_set(std::span<const AnchorSample> samples, std::span<const BeamSpec> beams, double area_x,
                           double area_y)
{
    if (samples.empty() || beams.empty())
        throw std::invalid_argument("train: empty training set");
    RsrpTrainSet s;
    s.beams.assign(beams.begin(), beams.end());
    for (const auto &a : samples)
    {
        if (a.rsrp_db.size() != beams.size())
            throw std::invalid_argument("train: sample has " + std::to_string(a.rsrp_db.size()) + " labels for " +
                                        std::to_string(beams.size()) + " beams");
        s.pos.push_back({normalize_coord(a.x, area_x), normalize_coord(a.y, area_y)});
        s.labels_db.insert(s.labels_db.end(), a.rsrp_db.begin(), a.rsrp_db.end());
    }
    double mean = 0.0;
    for (double v : s.labels_db)
        mean += v;
    mean /= static_cast<double>(s.labels_db.size());
    double var = 0.0;
    for (double v : s.labels_db)
        var += (v - mean) * (v - mean);
    var /= static_cast<double>(s.labels_db.size());
    s.label_mean = mean;
    s.label_std = std::max(std::sqrt(var), 1e-3);
    return s;
}

McppTrainSet make_mcpp_set(std::span<const AnchorSample> samples, double area_x, double area_y)
{
    if (samples.empty())
        throw std::invalid_argument("train: empty training set");
    McppTrainSet s;
    for (const auto &a : samples)
    {
        s.pos.push_back({normalize_coord(a.x, area_x), normalize_coord(a.y, area_y)});
        s.labels.push_back(canonicalized(a.mcpp));
    }
    return s;
}

void set_power_stats(NbfConfig &cfg, const McppTrainSet &set)
{
    double s = 0.0, s2 = 0.0;
    std::size_t n = 0;
    for (const auto &m : set.labels)
        for (const auto &p : m.paths)
            if (p.exists)
            {
                const double db = to_db(p.p);
                s += db;
                s2 += db * db;
                ++n;
            }
    if (n == 0)
        return;
    const double mean = s / static_cast<double>(n);
    cfg.p_db_mean = mean;
    cfg.p_db_std = std::max(std::sqrt(std::max(s2 / static_cast<double>(n) - mean * mean, 0.0)), 1.0);
}

void set_power_stats(NbfConfig &cfg, const RsrpTrainSet &set)
{
    // At initialisation every gate sits near 1/2 and beam gains average
    // about one, so the summed mean is roughly L/2 path powers.
    cfg.p_db_mean = set.label_mean - 10.0 * std::log10(0.5 * cfg.paths);
    cfg.p_db_std = std::max(set.label_std, 1.0);
}

void TrainTrace::write_csv(std::ostream &os) const
{
    os << "step,epoch,lr,loss," << part_a_name << ',' << part_b_name << '\n';
    os.precision(17);
    for (const auto &r : rows)
        os << r.step << ',' << r.epoch << ',' << r.lr << ',' << r.loss << ',' << r.part_a << ',' << r.part_b << '\n';
}

// ---------------------------------------------------------------- loops

namespace
{

// Training gates sharpen geometrically from sigmoid(k_0 z) to
// sigmoid(k_final z) so that the final soft gates agree with the hard
// inference threshold.
double gate_sharpness(const TrainConfig &cfg, std::size_t step, std::size_t total)
{
    if (total < 2)
        return cfg.gate_sharpness_final;
    const double k0 = cfg.gate_sharpness_initial;
    return k0 * std::pow(cfg.gate_sharpness_final / k0, static_cast<double>(step) / static_cast<double>(total - 1));
}

// Rescales all gradients together when their joint L2 norm exceeds `cap`.
void clip_grad_norm(const std::vector<Tensor> &params, double cap)
{
    double sq = 0.0;
    for (const Tensor &p : params)
        for (double g : p.grad())
            sq += g * g;
    const double norm = std::sqrt(sq);
    if (norm <= cap)
        return;
    const double f = cap / norm;
    for (Tensor p : params) // handles share their node
        for (double &g : p.mutable_grad())
            g *= f;
}

// Shared epoch/batch driver. `step_loss` builds the loss graph for a batch
// of indices and reports its two parts.
template <class StepFn>
TrainTrace run_loop(const std::vector<Tensor> &params, std::size_t n, const TrainConfig &cfg, StepFn step_loss)
{
    cfg.validate();
    if (n == 0)
        throw std::invalid_argument("train: empty training set");
    const std::size_t bs = static_cast<std::size_t>(cfg.batch_size);
    const std::size_t per_epoch = (n + bs - 1) / bs;
    std::size_t total = per_epoch * static_cast<std::size_t>(cfg.epochs);
    if (cfg.max_steps > 0)
        total = std::min(total, cfg.max_steps);

    ad::Adam opt(params);
    Rng rng(cfg.seed);
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    TrainTrace trace;
    std::size_t step = 0;
    for (std::size_t epoch = 0; step < total; ++epoch)
    {
        rng.shuffle(order);
        double acc = 0.0;
        std::size_t count = 0;
        for (std::size_t start = 0; start < n && step < total; start += bs, ++step)
        {
            const std::size_t end = std::min(start + bs, n);
            std::vector<std::size_t> idx(order.begin() + static_cast<std::ptrdiff_t>(start),
                                         order.begin() + static_cast<std::ptrdiff_t>(end));
            double a = 0.0, b = 0.0;
            Tensor loss = step_loss(idx, gate_sharpness(cfg, step, total), a, b);
            if (!std::isfinite(loss.item()))
                throw std::runtime_error("train: non-finite loss at step " + std::to_string(step));
            opt.zero_grad();
            loss.backward();
            if (cfg.grad_clip > 0.0)
                clip_grad_norm(params, cfg.grad_clip);
            const double lr =
                ad::onecycle_lr(step, total, cfg.lr_max, cfg.pct_start, cfg.div_factor, cfg.final_div_factor);
            opt.step(lr);
            trace.rows.push_back({step, epoch, lr, loss.item(), a, b});
            acc += loss.item();
            ++count;
        }
        if (count > 0)
            trace.epoch_loss.push_back(acc / static_cast<double>(count));
    }
    return trace;
}

void gather(const RsrpTrainSet &set, const std::vector<std::size_t> &idx, std::vector<Position> &pos,
            std::vector<double> &y)
{
    const std::size_t K = set.beams.size();
    pos.clear();
    y.clear();
    for (std::size_t i : idx)
    {
        pos.push_back(set.pos[i]);
        for (std::size_t k = 0; k < K; ++k)
            y.push_back(set.labels_db[i * K + k] / set.label_std);
    }
}

} // namespace

TrainTrace train_e2e(RsrpModel &model, const RsrpTrainSet &set, const TrainConfig &cfg)
{
    std::vector<Position> pos;
    std::vector<double> y;
    auto trace = run_loop(model.trainable(), set.size(), cfg, [&](const std::vector<std::size_t> &idx, double k,
                                                                  double &a, double &b) {
        gather(set, idx, pos, y);
        const auto *nbf = dynamic_cast<const NbfModel *>(&model);
        Tensor db = nbf ? nbf->rsrp_db(nbf->forward_mcpp(pos), set.beams, true, k)
                        : model.predict_db(pos, set.beams, true);
        Tensor pred = ad::scale(db, 1.0 / set.label_std);
        Tensor loss = ad::smooth_l1_loss(pred, y, cfg.smooth_l1_beta);
        a = loss.item();
        b = 0.0;
        return loss;
    });
    return trace;
}

PretrainLoss pretrain_loss(const NbfModel &model, std::span<const Position> pos, std::span<const Mcpp> labels,
                           const TrainConfig &cfg)
{
    if (pos.size() != labels.size() || pos.empty())
        throw std::invalid_argument("pretrain: positions and labels differ in count");
    const NbfConfig &mc = model.config();
    const std::size_t B = pos.size(), L = static_cast<std::size_t>(mc.paths);
    McppPrediction pred = model.forward_mcpp(pos);

    std::vector<double> exist(B * L, 0.0);
    std::vector<std::size_t> rows;
    std::vector<double> targets;
    for (std::size_t b = 0; b < B; ++b)
    {
        const Mcpp &lab = labels[b];
        const std::size_t m = lab.paths.size();
        if (m == 0)
            continue;
        const auto cost = match_cost(pred, b, lab, mc, cfg.w_exist, cfg.smooth_l1_beta);
        const MatchResult match = hungarian(cost, L, m);
        for (std::size_t i = 0; i < L; ++i)
        {
            const int j = match.assignment[i];
            if (j < 0)
                continue;
            exist[b * L + i] = 1.0;
            rows.push_back(b * L + i);
            const auto f = path_features(lab.paths[static_cast<std::size_t>(j)], mc);
            targets.insert(targets.end(), f.begin(), f.end());
        }
    }

    if (cfg.exist_smoothing > 0.0)
        for (double &t : exist)
            t = t * (1.0 - 2.0 * cfg.exist_smoothing) + cfg.exist_smoothing;

    PretrainLoss out;
    Tensor l_cls = ad::bce_with_logits(pred.logits, exist);
    out.l_cls = l_cls.item();
    out.matched = rows.size();
    out.total = l_cls;
    if (!rows.empty() && cfg.lambda_reg > 0.0)
    {
        Tensor feats = ad::concat({pred.u_tx, pred.u_rx, ad::reshape(pred.tau_norm, {B, L, 1}),
                                   ad::reshape(pred.p_z, {B, L, 1})},
                                  2);
        Tensor sel = ad::index_select(ad::reshape(feats, {B * L, 8}), rows);
        Tensor l_reg = ad::smooth_l1_loss(sel, targets, cfg.smooth_l1_beta);
        out.l_reg = l_reg.item();
        out.total = ad::add(l_cls, ad::scale(l_reg, cfg.lambda_reg));
    }
    return out;
}

TrainTrace pretrain(NbfModel &model, const McppTrainSet &set, const TrainConfig &cfg)
{
    std::vector<Position> pos;
    std::vector<Mcpp> labels;
    auto trace = run_loop(model.trainable(), set.size(), cfg, [&](const std::vector<std::size_t> &idx, double,
                                                                  double &a, double &b) {
        pos.clear();
        labels.clear();
        for (std::size_t i : idx)
        {
            pos.push_back(set.pos[i]);
            labels.push_back(set.labels[i]);
        }
        PretrainLoss l = pretrain_loss(model, pos, labels, cfg);
        a = l.l_cls;
        b = l.l_reg;
        return l.total;
    });
    trace.part_a_name = "l_cls";
    trace.part_b_name = "l_reg";
    return trace;
}

TrainTrace calibrate(NbfModel &model, const NbfModel &reference, const RsrpTrainSet &set, const TrainConfig &cfg)
{
    if (!(reference.config() == model.config()))
        throw std::invalid_argument("calibrate: reference model has a different configuration");
    std::vector<Position> pos;
    std::vector<double> y;
    return run_loop(model.trainable(), set.size(), cfg, [&](const std::vector<std::size_t> &idx, double k,
                                                            double &a, double &b) {
        gather(set, idx, pos, y);
        McppPrediction pred = model.forward_mcpp(pos);
        Tensor db = ad::scale(model.rsrp_db(pred, set.beams, true, k), 1.0 / set.label_std);
        Tensor l_rsrp = ad::smooth_l1_loss(db, y, cfg.smooth_l1_beta);
        a = l_rsrp.item();
        b = 0.0;
        if (cfg.lambda_feat == 0.0)
            return l_rsrp;
        const Tensor &rf = reference.forward_mcpp(pos).features;
        Tensor l_feat = ad::mse_loss(pred.features, Tensor::constant(rf.shape(), rf.value()));
        b = l_feat.item();
        return ad::add(l_rsrp, ad::scale(l_feat, cfg.lambda_feat));
    });
}

// ---------------------------------------------------------------- evaluation

nlohmann::json Metrics::to_json() const
{
    return {{"mae_db", mae_db},
            {"rmse_db", rmse_db},
            {"per_beam_mae_db", per_beam_mae},
            {"inference_ms", inference_ms},
            {"storage_bytes", storage_bytes},
            {"samples", samples},
            {"fallback_queries", fallback_queries}};
}

Metrics error_metrics(std::span<const double> pred, std::span<const double> labels, std::size_t k)
{
    if (pred.size() != labels.size() || k == 0 || pred.size() % k != 0 || pred.empty())
        throw std::invalid_argument("metrics: prediction and label shapes differ");
    Metrics m;
    m.samples = pred.size();
    m.per_beam_mae.assign(k, 0.0);
    double sa = 0.0, s2 = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i)
    {
        const double e = pred[i] - labels[i];
        sa += std::abs(e);
        s2 += e * e;
        m.per_beam_mae[i % k] += std::abs(e);
    }
    const double n = static_cast<double>(pred.size());
    m.mae_db = sa / n;
    m.rmse_db = std::sqrt(s2 / n);
    for (double &v : m.per_beam_mae)
        v /= n / static_cast<double>(k);
    return m;
}

Metrics evaluate(const PointPredictor &predict, std::span<const AnchorSample> samples, std::size_t k)
{
    std::vector<double> pred, lab, times;
    for (const auto &s : samples)
    {
        if (s.rsrp_db.size() != k)
            throw std::invalid_argument("evaluate: sample label count differs from beam count");
        const auto t0 = std::chrono::steady_clock::now();
        std::vector<double> p = predict(s.x, s.y);
        const auto t1 = std::chrono::steady_clock::now();
        if (p.size() != k)
            throw std::runtime_error("evaluate: predictor returned the wrong number of beams");
        times.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
        pred.insert(pred.end(), p.begin(), p.end());
        lab.insert(lab.end(), s.rsrp_db.begin(), s.rsrp_db.end());
    }
    Metrics m = error_metrics(pred, lab, k);
    std::nth_element(times.begin(), times.begin() + static_cast<std::ptrdiff_t>(times.size() / 2), times.end());
    m.inference_ms = times[times.size() / 2];
    return m;
}

Metrics evaluate_model(const RsrpModel &model, std::span<const AnchorSample> samples, std::span<const BeamSpec> beams,
                       double area_x, double area_y)
{
    Metrics m = evaluate(
        [&](double x, double y) {
            const Position p{normalize_coord(x, area_x), normalize_coord(y, area_y)};
            return model.predict_db(std::span<const Position>(&p, 1), beams, false).value();
        },
        samples, beams.size());
    m.storage_bytes = serialize_checkpoint(model.to_checkpoint()).size();
    return m;
}

namespace
{

std::size_t nearest_anchor(const GridCkm &ckm, double x, double y, const std::function<bool(std::size_t)> &usable)
{
    const GridSpec &g = ckm.grid();
    std::size_t best = g.size();
    double bd = std::numeric_limits<double>::infinity();
    for (std::size_t a = 0; a < g.size(); ++a)
    {
        if (!usable(a))
            continue;
        const double dx = g.anchor_x(a) - x, dy = g.anchor_y(a) - y;
        const double d = dx * dx + dy * dy;
        if (d < bd)
        {
            bd = d;
            best = a;
        }
    }
    if (best == g.size())
        throw NoCoverage("map has no populated anchors");
    return best;
}

} // namespace

PointPredictor idw_rsrp_predictor(const GridCkm &ckm, std::span<const BeamSpec> beams, std::size_t *fallbacks)
{
    return [&ckm, beams, fallbacks](double x, double y) {
        std::vector<double> out;
        bool fell_back = false;
        for (const auto &b : beams)
        {
            try
            {
                out.push_back(idw_rsrp_query(ckm, x, y, b));
            }
            catch (const NoCoverage &)
            {
                const auto bi = ckm.find_beam(b);
                if (!bi)
                    throw;
                const std::size_t a =
                    nearest_anchor(ckm, x, y, [&](std::size_t a) { return ckm.mean_db(a, *bi).has_value(); });
                out.push_back(*ckm.mean_db(a, *bi));
                fell_back = true;
            }
        }
        if (fell_back && fallbacks)
            ++*fallbacks;
        return out;
    };
}

PointPredictor idw_mcpp_predictor(const GridCkm &ckm, const ArrayConfig &cfg, std::span<const BeamSpec> beams,
                                  std::size_t *fallbacks)
{
    return [&ckm, &cfg, beams, fallbacks](double x, double y) {
        Mcpp mc;
        try
        {
            mc = idw_mcpp_interpolate(ckm, x, y);
        }
        catch (const NoCoverage &)
        {
            mc = *ckm.mcpp(nearest_anchor(ckm, x, y, [&](std::size_t a) { return ckm.mcpp(a).has_value(); }));
            if (fallbacks)
                ++*fallbacks;
        }
        std::vector<double> out;
        for (const auto &b : beams)
            out.push_back(to_db(rsrp_mean(mc, cfg, b)));
        return out;
    };
}

Metrics evaluate_idw_rsrp(const GridCkm &ckm, std::span<const AnchorSample> samples, std::span<const BeamSpec> beams)
{
    std::size_t fallbacks = 0;
    Metrics m = evaluate(idw_rsrp_predictor(ckm, beams, &fallbacks), samples, beams.size());
    m.fallback_queries = fallbacks;
    m.storage_bytes = ckm.serialized_bytes();
    return m;
}

Metrics evaluate_idw_mcpp(const GridCkm &ckm, std::span<const AnchorSample> samples, const ArrayConfig &cfg,
                          std::span<const BeamSpec> beams)
{
    std::size_t fallbacks = 0;
    Metrics m = evaluate(idw_mcpp_predictor(ckm, cfg, beams, &fallbacks), samples, beams.size());
    m.fallback_queries = fallbacks;
    // Stored MCPPs: 8 doubles per path.
    std::size_t bytes = 0;
    for (std::size_t a = 0; a < ckm.grid().size(); ++a)
        if (ckm.mcpp(a))
            bytes += ckm.mcpp(a)->paths.size() * 8 * sizeof(double);
    m.storage_bytes = bytes;
    return m;
}

} // namespace nbf
