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

#include "nbf/channel.hpp"
#include "nbf/checkpoint.hpp"
#include "nbf/tensor.hpp"

#include <array>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace nbf
{

/// UE position normalised to [-1, 1]^2.
using Position = std::array<double, 2>;

struct NbfConfig
{
    int d_model = 256;
    int n_blocks = 4;
    int n_heads = 8;
    int mlp_ratio = 4;
    int paths = 10; ///< L, number of target tokens
    double fourier_sigma = 1.0;
    double tau_max = 2.4e-6;   ///< seconds
    double p_db_mean = -100.0; ///< output affine of the path power head
    double p_db_std = 10.0;
    std::uint64_t seed = 1; ///< initialisation

    void validate() const;
    bool operator==(const NbfConfig &) const = default;
};

void to_json(nlohmann::json &j, const NbfConfig &c);
void from_json(const nlohmann::json &j, NbfConfig &c);

/// Predicted MCPPs for a batch of positions.
struct McppPrediction
{
    std::size_t batch = 0;
    std::size_t paths = 0;
    ad::Tensor u_tx;     ///< [B, L, 3], unit norm
    ad::Tensor u_rx;     ///< [B, L, 3], unit norm
    ad::Tensor tau_norm; ///< [B, L], tau / tau_max in (0, 1)
    ad::Tensor p_z;      ///< [B, L], standardised path power (p_db - mean) / std
    ad::Tensor p;        ///< [B, L], linear power
    ad::Tensor logits;   ///< [B, L], existence
    ad::Tensor features; ///< [B, L + 1, d_model], tokens after the final layer norm

    /// Path set of one batch row; existence by the hard 0.5 threshold.
    Mcpp mcpp(std::size_t b, double tau_max) const;
};

/// Common interface of the learned RSRP predictors.
class RsrpModel
{
  public:
    virtual ~RsrpModel() = default;
    virtual std::string kind() const = 0;
    /// Mean RSRP in dB, [B, K]. `training` selects soft existence gates.
    virtual ad::Tensor predict_db(std::span<const Position> pos, std::span<const BeamSpec> beams,
                                  bool training) const = 0;
    virtual std::vector<ad::Tensor> trainable() const = 0;
    virtual Checkpoint to_checkpoint() const = 0;
    /// Number of trainable scalars.
    std::size_t parameter_count() const;
};

class NbfModel : public RsrpModel
{
  public:
    NbfModel(const NbfConfig &cfg, const ArrayConfig &array);
    static NbfModel from_checkpoint(const Checkpoint &ckpt);

    // Parameters are graph leaves; copies would alias them, so copying is
    // explicit through clone().
    NbfModel(const NbfModel &) = delete;
    NbfModel &operator=(const NbfModel &) = delete;
    NbfModel(NbfModel &&) = default;
    NbfModel &operator=(NbfModel &&) = default;
    NbfModel clone() const;

    std::string kind() const override { return "nbf"; }
    const NbfConfig &config() const { return cfg_; }
    const ArrayConfig &array() const { return array_; }

    /// Random Fourier embedding [B, d_model]: sin half then cos half.
    std::vector<double> fourier_embed(std::span<const Position> pos) const;
    McppPrediction forward_mcpp(std::span<const Position> pos) const;
    /// Whitebox mean RSRP in dB for every beam, [B, K]. Training gates are
    /// sigmoid(sharpness * logit); inference gates are logit > 0.
    ad::Tensor rsrp_db(const McppPrediction &pred, std::span<const BeamSpec> beams, bool training,
                       double gate_sharpness = 1.0) const;
    ad::Tensor predict_db(std::span<const Position> pos, std::span<const BeamSpec> beams,
                          bool training) const override;
    std::vector<ad::Tensor> trainable() const override;
    Checkpoint to_checkpoint() const override;

    const ad::Tensor &param(const std::string &name) const;
    const std::vector<std::pair<std::string, ad::Tensor>> &named_parameters() const { return params_; }
    /// Copies parameter values from another model with the same layout.
    void load_values(const NbfModel &other);

    /// Frozen Fourier matrix [d_model / 2, 2].
    const std::vector<double> &fourier_matrix() const { return fourier_; }
    void set_fourier_matrix(std::vector<double> b);

  private:
    ad::Tensor linear(const ad::Tensor &x, const std::string &prefix) const;

    NbfConfig cfg_;
    ArrayConfig array_;
    std::vector<double> fourier_;
    std::vector<std::pair<std::string, ad::Tensor>> params_;
};

/// Whitebox mean as a graph op: u_tx [B, L, 3], p [B, L], gate [B, L]
/// -> [B, K].
ad::Tensor whitebox_mean(const ad::Tensor &u_tx, const ad::Tensor &p, const ad::Tensor &gate, const ArrayConfig &cfg,
                         std::span<const BeamSpec> beams);

struct MlpConfig
{
    std::vector<int> hidden{256, 256, 256};
    double out_mean = -100.0; ///< output affine: label dB statistics
    double out_std = 10.0;
    std::uint64_t seed = 1;

    /// Equal-width hidden stack of `depth` layers, just wide enough that the
    /// parameter count reaches `min_params`.
    static MlpConfig sized_for(std::size_t min_params, int depth);
    std::size_t parameter_count() const;
    bool operator==(const MlpConfig &) const = default;
};

void to_json(nlohmann::json &j, const MlpConfig &c);
void from_json(const nlohmann::json &j, MlpConfig &c);

/// Baseline: [x_n, y_n, sin xi_y, cos xi_y, sin xi_z, cos xi_z] -> dB.
class MlpModel : public RsrpModel
{
  public:
    static constexpr std::size_t kInputWidth = 6;

    explicit MlpModel(const MlpConfig &cfg);
    static MlpModel from_checkpoint(const Checkpoint &ckpt);

    MlpModel(const MlpModel &) = delete;
    MlpModel &operator=(const MlpModel &) = delete;
    MlpModel(MlpModel &&) = default;
    MlpModel &operator=(MlpModel &&) = default;

    std::string kind() const override { return "mlp"; }
    const MlpConfig &config() const { return cfg_; }
    ad::Tensor predict_db(std::span<const Position> pos, std::span<const BeamSpec> beams,
                          bool training) const override;
    std::vector<ad::Tensor> trainable() const override;
    Checkpoint to_checkpoint() const override;

  private:
    MlpConfig cfg_;
    std::vector<ad::Tensor> weights_, biases_;
};

std::unique_ptr<RsrpModel> load_model(const Checkpoint &ckpt);

} // namespace nbf
