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
#include "nbf/io.hpp"
#include "nbf/model.hpp"
#include "nbf/train.hpp"

#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace nbf
{

/// Invalid or unreadable experiment configuration. The message carries the
/// line number where it can be located.
class ConfigError : public std::runtime_error
{
  public:
    using std::runtime_error::runtime_error;
};

struct CodebookSpec
{
    int oversample_y = 1;
    int oversample_z = 1;
    bool operator==(const CodebookSpec &) const = default;
};

struct ExperimentConfig
{
    SiteConfig site;
    HybridConfig hybrid;
    ArrayConfig array;
    CodebookSpec codebook;
    NbfConfig model;
    int mlp_depth = 3;
    TrainConfig train;     ///< end-to-end runs (NBF and MLP)
    TrainConfig pretrain;  ///< MCPP-supervised pretraining
    TrainConfig calibrate; ///< on-site calibration
    /// Which field provides RSRP labels: "deterministic" or "hybrid".
    std::string scenario = "deterministic";
    double split_ratio = 0.8;
    double label_noise_db = 0.0;
    std::vector<double> sweep_fractions{0.25, 0.5};
    std::vector<int> heatmap_beams{0, 13};
    int mc_cases = 512;
    int n_mc = 20000;
    std::string out_dir = "out";
    std::uint64_t seed = 1;

    /// Re-seeds every stochastic stage (split, initialisation, batching,
    /// baseline subsets). Scene geometry and the hybrid field keep their own
    /// seeds so that runs with different seeds share one scene.
    void apply_seed(std::uint64_t s);
    void validate() const;
    std::vector<BeamSpec> beams() const;
};

void to_json(nlohmann::json &j, const ExperimentConfig &c);

/// 64 x 64 anchors at 4 m, six buildings, 8 x 4 panel and its 32 DFT beams.
ExperimentConfig desk_config();
ExperimentConfig parse_config(const std::string &text);
ExperimentConfig load_config(const std::string &path);

/// Deterministic site and its hybrid perturbation (identical when beta = 0).
struct Scene
{
    McppField deterministic;
    McppField hybrid;
    std::vector<BeamSpec> beams;

    const McppField &labels(const ExperimentConfig &cfg) const
    {
        return cfg.scenario == "hybrid" ? hybrid : deterministic;
    }
};

Scene make_scene(const ExperimentConfig &cfg);
/// Dataset of the configured scenario; MCPP labels are the deterministic
/// site (the prior available for pretraining).
Dataset make_dataset(const ExperimentConfig &cfg, const Scene &scene);
/// Keeps the first round(fraction * n) training anchors of a seeded shuffle.
Dataset subsample_train(const Dataset &ds, double fraction, std::uint64_t seed);

struct RunResult
{
    Checkpoint checkpoint;
    TrainTrace trace;
    Metrics metrics; ///< on the validation split
};

RunResult run_e2e_nbf(const ExperimentConfig &cfg, const Dataset &ds);
RunResult run_mlp(const ExperimentConfig &cfg, const Dataset &ds);
RunResult run_pretrain(const ExperimentConfig &cfg, const Dataset &ds);
RunResult run_calibrate(const ExperimentConfig &cfg, const NbfModel &reference, const Dataset &ds);

/// Baseline maps built from the training anchors (RSRP from the scenario
/// field, MCPPs from the deterministic prior).
GridCkm baseline_ckm(const ExperimentConfig &cfg, const Scene &scene, const Dataset &ds);
Metrics run_idw_rsrp(const ExperimentConfig &cfg, const Scene &scene, const Dataset &ds);
Metrics run_idw_mcpp(const ExperimentConfig &cfg, const Scene &scene, const Dataset &ds);

/// Row-major ny x nx grid as CSV (one grid row per line, iy ascending).
void write_grid_csv(std::ostream &os, int nx, int ny, std::span<const double> values);
std::vector<double> grid_difference(std::span<const double> a, std::span<const double> b);

struct McCase
{
    std::size_t anchor = 0;
    std::size_t beam = 0;
    std::size_t paths = 0;
    double mean_analytic = 0.0, mean_mc = 0.0;
    double std_analytic = 0.0, std_mc = 0.0;
    bool mean_ok = false, std_ok = false;
};

struct McSummary
{
    std::vector<McCase> cases;
    double mean_pass_rate = 0.0;
    double std_pass_rate = 0.0;
    bool passed() const { return mean_pass_rate >= 0.95 && std_pass_rate >= 0.90; }
};

/// Pass rules: |mu_mc - mu| <= 4 sigma / sqrt(n_mc) + 1e-12, and
/// |sigma_mc - sigma| <= 0.05 sigma (sigma_mc <= 1e-10 mu when sigma = 0).
McCase judge_mc_case(double mean_a, double std_a, double mean_mc, double std_mc, int n_mc);
McSummary mc_validate(const McppField &field, const ArrayConfig &array, std::span<const BeamSpec> beams, int n_cases,
                      int n_mc, std::uint64_t seed);
void write_mc_csv(std::ostream &os, const McSummary &s);

/// Exit codes of the command line tool.
enum ExitCode : int
{
    kExitOk = 0,
    kExitAcceptance = 1,
    kExitUsage = 2
};

struct CommandOptions
{
    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> out_dir;
    std::optional<int> n_mc;
    std::optional<std::string> ref_checkpoint;
};

/// Subcommands; each writes into the output directory and returns an exit code.
int cmd_gen(const ExperimentConfig &cfg, std::ostream &log);
int cmd_mc_validate(const ExperimentConfig &cfg, std::ostream &log);
int cmd_pretrain(const ExperimentConfig &cfg, std::ostream &log);
int cmd_train(const ExperimentConfig &cfg, std::ostream &log);
int cmd_calibrate(const ExperimentConfig &cfg, const std::string &ref_checkpoint, std::ostream &log);
int cmd_compare(const ExperimentConfig &cfg, std::ostream &log);

/// Parses argv and dispatches; usage and configuration errors return 2.
int run_cli(int argc, char **argv, std::ostream &out, std::ostream &err);

} // namespace nbf
