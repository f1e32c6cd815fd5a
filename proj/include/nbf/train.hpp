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

#pragma once

#include "nbf/ckm.hpp"
#include "nbf/model.hpp"

#include <functional>
#include <iosfwd>
#include <optional>
#include <vector>

namespace nbf
{

struct TrainConfig
{
    double lambda_reg = 5.0;
    double lambda_feat = 0.1;
    int batch_size = 32; ///< anchors per step; each anchor carries all beams
    int epochs = 20;
    std::size_t max_steps = 0; ///< caps the schedule when non-zero
    double lr_max = 2e-3;
    double pct_start = 0.3;
    double div_factor = 25.0;
    double final_div_factor = 1e4;
    double smooth_l1_beta = 1.0;
    double w_exist = 1.0;
    /// Pretraining existence targets become eps and 1 - eps. Keeps the
    /// logits of an inexact prior within reach of calibration.
    double exist_smoothing = 0.0;
    /// Soft existence gates are sigmoid(k z) with k moving geometrically
    /// from the initial to the final value over the run (RSRP losses only).
    /// An initial value below 1 unsaturates confident pretrained logits.
    double gate_sharpness_initial = 1.0;
    double gate_sharpness_final = 1.0;
    /// Global L2 gradient norm cap; 0 disables clipping.
    double grad_clip = 0.0;
    std::uint64_t seed = 1;

    void validate() const;
    bool operator==(const TrainConfig &) const = default;
};

void to_json(nlohmann::json &j, const TrainConfig &c);
void from_json(const nlohmann::json &j, TrainConfig &c);

/// Elementwise Smooth-L1 and its mean over a span.
double smooth_l1(double e, double beta);
double smooth_l1(std::span<const double> pred, std::span<const double> target, double beta);
/// Mean binary cross-entropy of logits against 0/1 targets.
double bce_existence(std::span<const double> logits, std::span<const double> targets);

struct MatchResult
{
    std::vector<int> assignment; ///< per row: matched column or -1
    std::vector<std::size_t> unmatched_rows;
    double cost = 0.0;
};

/// Minimum-cost assignment of size min(n, m) for a row-major n x m cost
/// matrix (rows are predictions, columns labels). Among optimal
/// assignments, the lexicographically smallest column sequence over rows
/// is returned.
MatchResult hungarian(std::span<const double> cost, std::size_t n, std::size_t m);

/// Per-path regression features: u_tx, u_rx, tau / tau_max, standardised dB power.
std::array<double, 8> path_features(const ScpEntry &s, const NbfConfig &cfg);

/// cost[i][j] = mean Smooth-L1 between predicted path i and label path j
/// over the 8 features, plus w_exist * (1 - sigmoid(logit_i)). Row-major,
/// L x label.size().
std::vector<double> match_cost(const McppPrediction &pred, std::size_t b, const Mcpp &label, const NbfConfig &cfg,
                               double w_exist, double beta);

/// Positions (normalised) with dB labels for every beam.
struct RsrpTrainSet
{
    std::vector<Position> pos;
    std::vector<double> labels_db; ///< [N, K]
    std::vector<BeamSpec> beams;
    double label_mean = 0.0;
    double label_std = 1.0;

    std::size_t size() const { return pos.size(); }
};

struct McppTrainSet
{
    std::vector<Position> pos;
    std::vector<Mcpp> labels;

    std::size_t size() const { return pos.size(); }
};

RsrpTrainSet make_rsrp_set(std::span<const AnchorSample> samples, std::span<const BeamSpec> beams, double area_x,
                           double area_y);
McppTrainSet make_mcpp_set(std::span<const AnchorSample> samples, double area_x, double area_y);

/// Output affine of the power head: from MCPP labels (mean/std of path dB)
/// or, lacking those, from RSRP labels assuming L half-open gates.
void set_power_stats(NbfConfig &cfg, const McppTrainSet &set);
void set_power_stats(NbfConfig &cfg, const RsrpTrainSet &set);

struct TraceRow
{
    std::size_t step = 0;
    std::size_t epoch = 0;
    double lr = 0.0;
    double loss = 0.0;
    double part_a = 0.0; ///< L_RSRP, or L_cls when pretraining
    double part_b = 0.0; ///< L_feat, or L_reg when pretraining
};

struct TrainTrace
{
    std::vector<TraceRow> rows;
    std::vector<double> epoch_loss; ///< mean step loss per epoch
    std::string part_a_name = "l_rsrp";
    std::string part_b_name = "l_feat";

    void write_csv(std::ostream &os) const;
};

/// Minimises Smooth-L1 of standardised dB predictions against the labels.
TrainTrace train_e2e(RsrpModel &model, const RsrpTrainSet &set, const TrainConfig &cfg);

/// Set loss: Hungarian matching per sample, BCE on all existence logits
/// (1 for matched, 0 otherwise) plus lambda_reg * Smooth-L1 on matched pairs.
TrainTrace pretrain(NbfModel &model, const McppTrainSet &set, const TrainConfig &cfg);

/// Pretrain-loss of one batch for a fixed model; exposes the pieces used
/// by the training step (for tests).
struct PretrainLoss
{
    ad::Tensor total;
    double l_cls = 0.0;
    double l_reg = 0.0;
    std::size_t matched = 0;
};
PretrainLoss pretrain_loss(const NbfModel &model, std::span<const Position> pos, std::span<const Mcpp> labels,
                           const TrainConfig &cfg);

/// L_RSRP + lambda_feat * MSE(normalised final tokens, reference tokens).
TrainTrace calibrate(NbfModel &model, const NbfModel &reference, const RsrpTrainSet &set, const TrainConfig &cfg);

struct Metrics
{
    double mae_db = 0.0;
    double rmse_db = 0.0;
    std::vector<double> per_beam_mae;
    double inference_ms = 0.0; ///< median wall time per position (all beams)
    std::size_t storage_bytes = 0;
    std::size_t samples = 0;
    std::size_t fallback_queries = 0; ///< IDW queries answered by the nearest anchor

    nlohmann::json to_json() const;
};

/// Error statistics of predictions against labels, both [N, K].
Metrics error_metrics(std::span<const double> pred, std::span<const double> labels, std::size_t k);

/// Predictor for one position: dB for every beam.
using PointPredictor = std::function<std::vector<double>(double x, double y)>;
/// Runs the predictor on every sample position, timing each call.
Metrics evaluate(const PointPredictor &predict, std::span<const AnchorSample> samples, std::size_t k);

Metrics evaluate_model(const RsrpModel &model, std::span<const AnchorSample> samples, std::span<const BeamSpec> beams,
                       double area_x, double area_y);
/// Point predictors of the IDW baselines. Queries without coverage fall
/// back to the nearest populated anchor; `fallbacks` counts them.
PointPredictor idw_rsrp_predictor(const GridCkm &ckm, std::span<const BeamSpec> beams, std::size_t *fallbacks = nullptr);
PointPredictor idw_mcpp_predictor(const GridCkm &ckm, const ArrayConfig &cfg, std::span<const BeamSpec> beams,
                                  std::size_t *fallbacks = nullptr);

/// IDW baselines. Queries without coverage fall back to the nearest
/// populated anchor and are counted in fallback_queries.
Metrics evaluate_idw_rsrp(const GridCkm &ckm, std::span<const AnchorSample> samples, std::span<const BeamSpec> beams);
Metrics evaluate_idw_mcpp(const GridCkm &ckm, std::span<const AnchorSample> samples, const ArrayConfig &cfg,
                          std::span<const BeamSpec> beams);

} // namespace nbf
