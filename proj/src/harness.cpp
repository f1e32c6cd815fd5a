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

#include "nbf/harness.hpp"

#include "nbf/rng.hpp"
#include "nbf/whitebox.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <set>
#include <numeric>
#include <sstream>

namespace nbf
{

namespace fs = std::filesystem;
using nlohmann::json;

// ---------------------------------------------------------------- config

void ExperimentConfig::apply_seed(std::uint64_t s)
{
    seed = s;
    model.seed = s;
    train.seed = s + 1;
    pretrain.seed = s + 2;
    calibrate.seed = s + 3;
}

void ExperimentConfig::validate() const
{
    site.validate();
    hybrid.validate();
    array.validate();
    model.validate();
    train.validate();
    pretrain.validate();
    calibrate.validate();
    auto fail = [](const std::string &m) { throw std::invalid_argument(m); };
    if (codebook.oversample_y < 1 || codebook.oversample_z < 1)
        fail("codebook: oversampling must be at least 1");
    if (mlp_depth < 1)
        fail("mlp_depth must be at least 1");
    if (scenario != "deterministic" && scenario != "hybrid")
        fail("scenario must be \"deterministic\" or \"hybrid\"");
    if (!(split_ratio > 0.0 && split_ratio < 1.0))
        fail("split_ratio must lie in (0, 1)");
    if (!(label_noise_db >= 0.0))
        fail("label_noise_db must be non-negative");
    for (double f : sweep_fractions)
        if (!(f > 0.0 && f <= 1.0))
            fail("sweep_fractions must lie in (0, 1]");
    const auto k = static_cast<int>(beams().size());
    for (int b : heatmap_beams)
        if (b < 0 || b >= k)
            fail("heatmap_beams: beam " + std::to_string(b) + " outside the codebook of " + std::to_string(k));
    if (mc_cases < 1 || n_mc < 2)
        fail("mc_cases must be >= 1 and n_mc >= 2");
    if (out_dir.empty())
        fail("out_dir must not be empty");
    if (std::abs(site.f_c - array.f_c) > 1e-6 * site.f_c)
        fail("site.f_c and array.f_c differ");
}

std::vector<BeamSpec> ExperimentConfig::beams() const
{
    return dft_codebook(array, codebook.oversample_y, codebook.oversample_z);
}

void to_json(json &j, const ExperimentConfig &c)
{
    j = {{"site", c.site},
         {"hybrid", c.hybrid},
         {"array", c.array},
         {"codebook", {{"oversample_y", c.codebook.oversample_y}, {"oversample_z", c.codebook.oversample_z}}},
         {"model", c.model},
         {"mlp_depth", c.mlp_depth},
         {"train", c.train},
         {"pretrain", c.pretrain},
         {"calibrate", c.calibrate},
         {"scenario", c.scenario},
         {"split_ratio", c.split_ratio},
         {"label_noise_db", c.label_noise_db},
         {"sweep_fractions", c.sweep_fractions},
         {"heatmap_beams", c.heatmap_beams},
         {"mc_cases", c.mc_cases},
         {"n_mc", c.n_mc},
         {"out_dir", c.out_dir},
         {"seed", c.seed}};
}

ExperimentConfig desk_config()
{
    ExperimentConfig c;
    c.site.area_side = 256.0;
    c.site.grid_spacing = 4.0;
    c.site.bs_position = {0.0, 128.0, 20.0};
    // Buildings: x, y, width, depth, height. Walls let 20 dB through so
    // indoor anchors keep an attenuated direct path.
    const double b[][5] = {{60, 30, 30, 40, 25},   {120, 150, 40, 30, 18}, {180, 60, 25, 50, 30},
                           {70, 190, 35, 25, 15},  {200, 200, 30, 30, 22}, {140, 90, 20, 20, 12}};
    for (const auto &r : b)
    {
        Box box;
        box.min_corner = {r[0], r[1], 0.0};
        box.size = {r[2], r[3], r[4]};
        box.reflection_loss_db = 6.0;
        box.penetration_loss_db = 20.0;
        c.site.obstacles.push_back(box);
    }
    c.array = ArrayConfig{};
    c.model.d_model = 32;
    c.model.n_blocks = 2;
    c.model.n_heads = 4;
    c.model.mlp_ratio = 2;
    c.model.fourier_sigma = 0.5;
    c.model.tau_max = 2.0 * std::sqrt(2.0) * c.site.area_side / kSpeedOfLight;
    c.train.epochs = 60;
    c.train.batch_size = 16;
    c.train.lr_max = 5e-3;
    c.train.grad_clip = 1.0;
    c.train.gate_sharpness_final = 30.0;
    c.pretrain = c.train;
    c.pretrain.gate_sharpness_final = 1.0;
    // Smoothed existence targets keep pretrained logits small enough for
    // calibration to flip.
    c.pretrain.exist_smoothing = 0.1;
    c.calibrate = c.train;
    c.calibrate.epochs = 30;
    c.calibrate.lr_max = 2e-3;
    c.apply_seed(1);
    return c;
}

namespace
{

std::size_t line_of(const std::string &text, const std::string &key)
{
    const auto pos = text.find('"' + key + '"');
    if (pos == std::string::npos)
        return 0;
    return static_cast<std::size_t>(std::count(text.begin(), text.begin() + static_cast<std::ptrdiff_t>(pos), '\n')) +
           1;
}

// Line of the offending key: a quoted name in the message, else its
// leading word, else the section key; the first one found in the text.
[[noreturn]] void config_fail(const std::string &text, const std::string &section, const std::string &msg)
{
    std::vector<std::string> keys;
    const auto q0 = msg.find('"');
    if (q0 != std::string::npos)
    {
        const auto q1 = msg.find('"', q0 + 1);
        if (q1 != std::string::npos)
            keys.push_back(msg.substr(q0 + 1, q1 - q0 - 1));
    }
    keys.push_back(msg.substr(0, msg.find_first_of(" :.")));
    keys.push_back(section);
    std::size_t line = 0;
    for (const auto &k : keys)
        if (!k.empty() && (line = line_of(text, k)) > 0)
            break;
    throw ConfigError(line > 0 ? "config line " + std::to_string(line) + ": " + msg : "config: " + msg);
}

template <class T>
void section(const json &j, const std::string &text, const std::string &key, T &out)
{
    if (!j.contains(key))
        return;
    try
    {
        j.at(key).get_to(out);
    }
    catch (const std::exception &e)
    {
        config_fail(text, key, key + ": " + e.what());
    }
}

} // namespace

ExperimentConfig parse_config(const std::string &text)
{
    json j;
    try
    {
        j = json::parse(text);
    }
    catch (const json::parse_error &e)
    {
        // nlohmann reports "line N, column M" in the message.
        throw ConfigError(std::string("config: ") + e.what());
    }
    if (!j.is_object())
        throw ConfigError("config line 1: top level must be an object");

    static const std::set<std::string> known{
        "site",       "hybrid",          "array",          "codebook",        "model",
        "mlp_depth",  "train",           "pretrain",       "calibrate",       "scenario",
        "split_ratio", "label_noise_db", "sweep_fractions", "heatmap_beams",  "mc_cases",
        "n_mc",       "out_dir",         "seed"};
    for (const auto &item : j.items())
        if (!known.count(item.key()))
            config_fail(text, "", "unknown key \"" + item.key() + "\"");

    ExperimentConfig c = desk_config();
    section(j, text, "site", c.site);
    section(j, text, "hybrid", c.hybrid);
    section(j, text, "array", c.array);
    if (j.contains("codebook"))
    {
        try
        {
            const json &cb = j.at("codebook");
            for (const auto &item : cb.items())
                if (item.key() != "oversample_y" && item.key() != "oversample_z")
                    throw std::invalid_argument("unknown key \"" + item.key() + "\"");
            if (cb.contains("oversample_y"))
                cb.at("oversample_y").get_to(c.codebook.oversample_y);
            if (cb.contains("oversample_z"))
                cb.at("oversample_z").get_to(c.codebook.oversample_z);
        }
        catch (const std::exception &e)
        {
            config_fail(text, "codebook", std::string("codebook: ") + e.what());
        }
    }
    section(j, text, "model", c.model);
    section(j, text, "mlp_depth", c.mlp_depth);
    section(j, text, "train", c.train);
    section(j, text, "pretrain", c.pretrain);
    section(j, text, "calibrate", c.calibrate);
    section(j, text, "scenario", c.scenario);
    section(j, text, "split_ratio", c.split_ratio);
    section(j, text, "label_noise_db", c.label_noise_db);
    section(j, text, "sweep_fractions", c.sweep_fractions);
    section(j, text, "heatmap_beams", c.heatmap_beams);
    section(j, text, "mc_cases", c.mc_cases);
    section(j, text, "n_mc", c.n_mc);
    section(j, text, "out_dir", c.out_dir);
    // Delay normalisation follows the map unless set explicitly.
    if (!(j.contains("model") && j.at("model").is_object() && j.at("model").contains("tau_max")))
        c.model.tau_max = 2.0 * std::sqrt(2.0) * c.site.area_side / kSpeedOfLight;
    if (j.contains("seed"))
    {
        std::uint64_t s = 0;
        section(j, text, "seed", s);
        c.apply_seed(s);
    }
    auto check = [&](const std::string &key, auto fn) {
        try
        {
            fn();
        }
        catch (const std::exception &e)
        {
            config_fail(text, key, e.what());
        }
    };
    check("site", [&] { c.site.validate(); });
    check("hybrid", [&] { c.hybrid.validate(); });
    check("array", [&] { c.array.validate(); });
    check("model", [&] { c.model.validate(); });
    check("train", [&] { c.train.validate(); });
    check("pretrain", [&] { c.pretrain.validate(); });
    check("calibrate", [&] { c.calibrate.validate(); });
    check("", [&] { c.validate(); });
    return c;
}

ExperimentConfig load_config(const std::string &path)
{
    std::ifstream is(path, std::ios::binary);
    if (!is)
        throw ConfigError("config: cannot open " + path);
    std::ostringstream ss;
    ss << is.rdbuf();
    return parse_config(ss.str());
}

// ---------------------------------------------------------------- pipeline

Scene make_scene(const ExperimentConfig &cfg)
{
    Scene s;
    s.deterministic = generate_site(cfg.site);
    s.hybrid = perturb_hybrid(s.deterministic, cfg.hybrid);
    s.beams = cfg.beams();
    return s;
}

Dataset make_dataset(const ExperimentConfig &cfg, const Scene &scene)
{
    Dataset ds = build_dataset(scene.labels(cfg), cfg.array, scene.beams, cfg.split_ratio, cfg.seed,
                               cfg.label_noise_db);
    for (auto *part : {&ds.train, &ds.val})
        for (AnchorSample &a : *part)
            a.mcpp = scene.deterministic.anchors.at(a.anchor);
    return ds;
}

Dataset subsample_train(const Dataset &ds, double fraction, std::uint64_t seed)
{
    if (!(fraction > 0.0 && fraction <= 1.0))
        throw std::invalid_argument("subsample: fraction must lie in (0, 1]");
    std::vector<std::size_t> idx(ds.train.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    Rng rng(seed);
    rng.shuffle(idx);
    const auto n = std::max<std::size_t>(
        1, static_cast<std::size_t>(std::llround(fraction * static_cast<double>(idx.size()))));
    idx.resize(n);
    std::sort(idx.begin(), idx.end());
    Dataset out = ds;
    out.train.clear();
    for (std::size_t i : idx)
        out.train.push_back(ds.train[i]);
    return out;
}

RunResult run_e2e_nbf(const ExperimentConfig &cfg, const Dataset &ds)
{
    const RsrpTrainSet set = make_rsrp_set(ds.train, ds.beams, ds.area_x, ds.area_y);
    NbfConfig mc = cfg.model;
    set_power_stats(mc, set);
    NbfModel model(mc, cfg.array);
    RunResult r;
    r.trace = train_e2e(model, set, cfg.train);
    r.metrics = evaluate_model(model, ds.val, ds.beams, ds.area_x, ds.area_y);
    r.checkpoint = model.to_checkpoint();
    return r;
}

RunResult run_mlp(const ExperimentConfig &cfg, const Dataset &ds)
{
    const RsrpTrainSet set = make_rsrp_set(ds.train, ds.beams, ds.area_x, ds.area_y);
    // At least as many parameters as the NBF it is compared against.
    const std::size_t budget = NbfModel(cfg.model, cfg.array).parameter_count();
    MlpConfig mc = MlpConfig::sized_for(budget, cfg.mlp_depth);
    mc.out_mean = set.label_mean;
    mc.out_std = set.label_std;
    mc.seed = cfg.model.seed + 5;
    MlpModel model(mc);
    RunResult r;
    r.trace = train_e2e(model, set, cfg.train);
    r.metrics = evaluate_model(model, ds.val, ds.beams, ds.area_x, ds.area_y);
    r.checkpoint = model.to_checkpoint();
    return r;
}

RunResult run_pretrain(const ExperimentConfig &cfg, const Dataset &ds)
{
    const McppTrainSet set = make_mcpp_set(ds.train, ds.area_x, ds.area_y);
    NbfConfig mc = cfg.model;
    set_power_stats(mc, set);
    NbfModel model(mc, cfg.array);
    RunResult r;
    r.trace = pretrain(model, set, cfg.pretrain);
    r.metrics = evaluate_model(model, ds.val, ds.beams, ds.area_x, ds.area_y);
    r.checkpoint = model.to_checkpoint();
    return r;
}

RunResult run_calibrate(const ExperimentConfig &cfg, const NbfModel &reference, const Dataset &ds)
{
    const RsrpTrainSet set = make_rsrp_set(ds.train, ds.beams, ds.area_x, ds.area_y);
    NbfModel model = reference.clone();
    RunResult r;
    r.trace = calibrate(model, reference, set, cfg.calibrate);
    r.metrics = evaluate_model(model, ds.val, ds.beams, ds.area_x, ds.area_y);
    r.checkpoint = model.to_checkpoint();
    return r;
}

GridCkm baseline_ckm(const ExperimentConfig &cfg, const Scene &scene, const Dataset &ds)
{
    std::vector<std::size_t> anchors;
    for (const auto &a : ds.train)
        anchors.push_back(a.anchor);
    return ckm_from_field(scene.labels(cfg), cfg.array, ds.beams, 1.0, cfg.seed, anchors, &scene.deterministic);
}

Metrics run_idw_rsrp(const ExperimentConfig &cfg, const Scene &scene, const Dataset &ds)
{
    return evaluate_idw_rsrp(baseline_ckm(cfg, scene, ds), ds.val, ds.beams);
}

Metrics run_idw_mcpp(const ExperimentConfig &cfg, const Scene &scene, const Dataset &ds)
{
    return evaluate_idw_mcpp(baseline_ckm(cfg, scene, ds), ds.val, cfg.array, ds.beams);
}

void write_grid_csv(std::ostream &os, int nx, int ny, std::span<const double> values)
{
    if (values.size() != static_cast<std::size_t>(nx) * static_cast<std::size_t>(ny))
        throw std::invalid_argument("grid csv: value count does not match the grid");
    for (int iy = 0; iy < ny; ++iy)
    {
        for (int ix = 0; ix < nx; ++ix)
        {
            if (ix > 0)
                os << ',';
            os << format_double(values[static_cast<std::size_t>(iy) * nx + ix]);
        }
        os << '\n';
    }
}

std::vector<double> grid_difference(std::span<const double> a, std::span<const double> b)
{
    if (a.size() != b.size())
        throw std::invalid_argument("grid difference: sizes differ");
    std::vector<double> d(a.size());
    for (std::size_t i = 0; i < a.size(); ++i)
        d[i] = a[i] - b[i];
    return d;
}

// ---------------------------------------------------------------- MC validation

McCase judge_mc_case(double mean_a, double std_a, double mean_mc, double std_mc, int n_mc)
{
    McCase c;
    c.mean_analytic = mean_a;
    c.std_analytic = std_a;
    c.mean_mc = mean_mc;
    c.std_mc = std_mc;
    c.mean_ok = std::abs(mean_mc - mean_a) <= 4.0 * std_a / std::sqrt(static_cast<double>(n_mc)) + 1e-12;
    c.std_ok = std_a > 0.0 ? std::abs(std_mc - std_a) <= 0.05 * std_a : std_mc <= 1e-10 * mean_a;
    return c;
}

McSummary mc_validate(const McppField &field, const ArrayConfig &array, std::span<const BeamSpec> beams, int n_cases,
                      int n_mc, std::uint64_t seed)
{
    if (beams.empty() || field.size() == 0)
        throw std::invalid_argument("mc_validate: empty field or codebook");
    std::vector<std::size_t> usable;
    for (std::size_t a = 0; a < field.size(); ++a)
        if (field.anchors[a].existing_count() > 0)
            usable.push_back(a);
    if (usable.empty())
        throw std::invalid_argument("mc_validate: no anchor has a path");
    McSummary s;
    std::size_t mean_ok = 0, std_ok = 0;
    for (int i = 0; i < n_cases; ++i)
    {
        const auto ui = static_cast<std::size_t>(counter_hash(seed, 0x6d63, static_cast<std::uint64_t>(i)) %
                                                 usable.size());
        const auto b = static_cast<std::size_t>(counter_hash(seed, 0x6265, static_cast<std::uint64_t>(i)) %
                                                beams.size());
        const Mcpp &m = field.anchors[usable[ui]];
        const RsrpStats st = rsrp_stats(m, array, beams[b]);
        const McStats mc = mc_stats(m, array, beams[b], n_mc, counter_hash(seed, 0x6d6373, static_cast<std::uint64_t>(i)));
        McCase c = judge_mc_case(st.mean, std::sqrt(std::max(st.variance, 0.0)), mc.mean, mc.std, n_mc);
        c.anchor = usable[ui];
        c.beam = b;
        c.paths = m.existing_count();
        mean_ok += c.mean_ok ? 1 : 0;
        std_ok += c.std_ok ? 1 : 0;
        s.cases.push_back(c);
    }
    s.mean_pass_rate = static_cast<double>(mean_ok) / n_cases;
    s.std_pass_rate = static_cast<double>(std_ok) / n_cases;
    return s;
}

void write_mc_csv(std::ostream &os, const McSummary &s)
{
    os << "case,anchor,beam,paths,mean_analytic,mean_mc,mean_rel_err,std_analytic,std_mc,std_rel_err,mean_ok,std_ok\n";
    for (std::size_t i = 0; i < s.cases.size(); ++i)
    {
        const McCase &c = s.cases[i];
        const double mre = std::abs(c.mean_mc - c.mean_analytic) / std::max(c.mean_analytic, 1e-300);
        const double sre = c.std_analytic > 0.0 ? std::abs(c.std_mc - c.std_analytic) / c.std_analytic : 0.0;
        os << i << ',' << c.anchor << ',' << c.beam << ',' << c.paths << ',' << format_double(c.mean_analytic) << ','
           << format_double(c.mean_mc) << ',' << format_double(mre) << ',' << format_double(c.std_analytic) << ','
           << format_double(c.std_mc) << ',' << format_double(sre) << ',' << (c.mean_ok ? 1 : 0) << ','
           << (c.std_ok ? 1 : 0) << '\n';
    }
}

// ---------------------------------------------------------------- commands

namespace
{

// Failures that map to exit code 2 (missing inputs, mismatched artifacts).
class UsageError : public std::runtime_error
{
  public:
    using std::runtime_error::runtime_error;
};

fs::path out_path(const ExperimentConfig &cfg, const std::string &name) { return fs::path(cfg.out_dir) / name; }

void ensure_out_dir(const ExperimentConfig &cfg)
{
    std::error_code ec;
    fs::create_directories(cfg.out_dir, ec);
    if (ec || !fs::is_directory(cfg.out_dir))
        throw UsageError("cannot create output directory " + cfg.out_dir);
}

std::string read_required(const fs::path &p, const std::string &hint)
{
    if (!fs::exists(p))
        throw UsageError("missing " + p.string() + " (" + hint + ")");
    return read_text_file(p.string());
}

template <class Fn>
void write_with(const fs::path &p, Fn fn)
{
    std::ostringstream os;
    fn(os);
    write_text_file(p.string(), os.str());
}

std::string metrics_json(const Metrics &m)
{
    // Wall-clock timing is left out so that artifacts are reproducible.
    json j = m.to_json();
    j.erase("inference_ms");
    return j.dump(2) + "\n";
}

struct Artifacts
{
    Scene scene;
    Dataset ds;
};

// Field and dataset files written by `gen`, checked against the config.
Artifacts load_artifacts(const ExperimentConfig &cfg)
{
    Artifacts a;
    {
        std::istringstream is(read_required(out_path(cfg, "field.csv"), "run gen first"));
        a.scene.deterministic = read_field_csv(is);
    }
    {
        std::istringstream is(read_required(out_path(cfg, "field_hybrid.csv"), "run gen first"));
        a.scene.hybrid = read_field_csv(is);
    }
    a.scene.beams = cfg.beams();
    const McppField &f = a.scene.deterministic;
    if (f.nx != cfg.site.grid_count() || f.ny != cfg.site.grid_count() || a.scene.hybrid.size() != f.size())
        throw UsageError("field files do not match the configured grid; rerun gen");
    a.ds.beams = a.scene.beams;
    a.ds.area_x = f.area_side_x();
    a.ds.area_y = f.area_side_y();
    for (auto [name, part] : {std::pair{"train.csv", &a.ds.train}, std::pair{"val.csv", &a.ds.val}})
    {
        std::istringstream is(read_required(out_path(cfg, name), "run gen first"));
        std::vector<BeamSpec> beams;
        *part = read_samples_csv(is, beams);
        if (beams != a.scene.beams)
            throw UsageError(std::string(name) + ": beams differ from the configured codebook");
        for (AnchorSample &s : *part)
        {
            const auto ix = static_cast<int>(std::floor(s.x / f.spacing));
            const auto iy = static_cast<int>(std::floor(s.y / f.spacing));
            if (ix < 0 || iy < 0 || ix >= f.nx || iy >= f.ny)
                throw UsageError(std::string(name) + ": sample outside the grid");
            s.anchor = f.index(ix, iy);
            s.mcpp = f.anchors[s.anchor];
        }
    }
    return a;
}

void write_run(const ExperimentConfig &cfg, const RunResult &r, const std::string &tag, std::ostream &log)
{
    save_checkpoint(out_path(cfg, tag + ".ckpt").string(), r.checkpoint);
    write_with(out_path(cfg, "trace_" + tag + ".csv"), [&](std::ostream &os) { r.trace.write_csv(os); });
    write_text_file(out_path(cfg, "metrics_" + tag + ".json").string(), metrics_json(r.metrics));
    log << tag << ": val MAE " << std::fixed << std::setprecision(3) << r.metrics.mae_db << " dB over "
        << r.metrics.samples << " samples\n";
    log.unsetf(std::ios::floatfield);
}

NbfModel load_nbf(const fs::path &p)
{
    if (!fs::exists(p))
        throw UsageError("missing checkpoint " + p.string());
    const Checkpoint c = load_checkpoint(p.string());
    if (c.meta.value("kind", "") != "nbf")
        throw UsageError(p.string() + " is not an NBF checkpoint");
    return NbfModel::from_checkpoint(c);
}

// Predictions of every anchor of the grid for one beam.
std::vector<double> grid_prediction(const PointPredictor &predict, const McppField &f, std::size_t beam)
{
    std::vector<double> out(f.size());
    for (std::size_t a = 0; a < f.size(); ++a)
    {
        const Vec3 p = f.position(a);
        out[a] = predict(p.x, p.y)[beam];
    }
    return out;
}

} // namespace

int cmd_gen(const ExperimentConfig &cfg, std::ostream &log)
{
    ensure_out_dir(cfg);
    const Scene scene = make_scene(cfg);
    const Dataset ds = make_dataset(cfg, scene);
    write_with(out_path(cfg, "field.csv"), [&](std::ostream &os) { write_field_csv(os, scene.deterministic); });
    write_with(out_path(cfg, "field_hybrid.csv"), [&](std::ostream &os) { write_field_csv(os, scene.hybrid); });
    write_with(out_path(cfg, "train.csv"), [&](std::ostream &os) { write_samples_csv(os, ds.train, ds.beams); });
    write_with(out_path(cfg, "val.csv"), [&](std::ostream &os) { write_samples_csv(os, ds.val, ds.beams); });
    // The resolved configuration, minus the output location.
    json resolved = cfg;
    resolved.erase("out_dir");
    write_text_file(out_path(cfg, "config.json").string(), resolved.dump(2) + "\n");
    log << "anchors " << scene.deterministic.size() << ", beams " << ds.beams.size() << ", samples "
        << ds.train_samples() + ds.val_samples() << " (train " << ds.train_samples() << ", val " << ds.val_samples()
        << ")\n";
    return kExitOk;
}

int cmd_mc_validate(const ExperimentConfig &cfg, std::ostream &log)
{
    ensure_out_dir(cfg);
    const Scene scene = make_scene(cfg);
    const McSummary s = mc_validate(scene.labels(cfg), cfg.array, scene.beams, cfg.mc_cases, cfg.n_mc, cfg.seed);
    write_with(out_path(cfg, "mc_validate.csv"), [&](std::ostream &os) { write_mc_csv(os, s); });
    log << "mc-validate: " << s.cases.size() << " cases, n_mc " << cfg.n_mc << ", mean pass rate " << s.mean_pass_rate
        << ", std pass rate " << s.std_pass_rate << (s.passed() ? " PASS" : " FAIL") << '\n';
    return s.passed() ? kExitOk : kExitAcceptance;
}

int cmd_pretrain(const ExperimentConfig &cfg, std::ostream &log)
{
    ensure_out_dir(cfg);
    const Artifacts a = load_artifacts(cfg);
    write_run(cfg, run_pretrain(cfg, a.ds), "pretrained", log);
    return kExitOk;
}

int cmd_train(const ExperimentConfig &cfg, std::ostream &log)
{
    ensure_out_dir(cfg);
    const Artifacts a = load_artifacts(cfg);
    write_run(cfg, run_e2e_nbf(cfg, a.ds), "nbf", log);
    write_run(cfg, run_mlp(cfg, a.ds), "mlp", log);
    return kExitOk;
}

int cmd_calibrate(const ExperimentConfig &cfg, const std::string &ref_checkpoint, std::ostream &log)
{
    if (ref_checkpoint.empty())
        throw UsageError("calibrate needs --ref-checkpoint");
    ensure_out_dir(cfg);
    const NbfModel ref = load_nbf(ref_checkpoint);
    if (json(ref.array()) != json(cfg.array))
        throw UsageError("reference checkpoint was trained for a different array");
    const Artifacts a = load_artifacts(cfg);
    write_run(cfg, run_calibrate(cfg, ref, a.ds), "pac", log);
    return kExitOk;
}

int cmd_compare(const ExperimentConfig &cfg, std::ostream &log)
{
    ensure_out_dir(cfg);
    const Artifacts a = load_artifacts(cfg);
    const Dataset &ds = a.ds;
    const NbfModel nbf = load_nbf(out_path(cfg, "nbf.ckpt"));
    const NbfModel pac = load_nbf(out_path(cfg, "pac.ckpt"));
    const NbfModel pre = load_nbf(out_path(cfg, "pretrained.ckpt"));
    if (!fs::exists(out_path(cfg, "mlp.ckpt")))
        throw UsageError("missing checkpoint " + out_path(cfg, "mlp.ckpt").string());
    const MlpModel mlp = MlpModel::from_checkpoint(load_checkpoint(out_path(cfg, "mlp.ckpt").string()));
    const GridCkm ckm = baseline_ckm(cfg, a.scene, ds);

    auto model_predictor = [&](const RsrpModel &m) -> PointPredictor {
        return [&m, &ds](double x, double y) {
            const Position p{normalize_coord(x, ds.area_x), normalize_coord(y, ds.area_y)};
            return m.predict_db(std::span<const Position>(&p, 1), ds.beams, false).value();
        };
    };
    struct Method
    {
        std::string name;
        Metrics metrics;
        PointPredictor predict;
    };
    std::vector<Method> methods;
    methods.push_back({"NBF", evaluate_model(nbf, ds.val, ds.beams, ds.area_x, ds.area_y), model_predictor(nbf)});
    methods.push_back({"PaC-NBF", evaluate_model(pac, ds.val, ds.beams, ds.area_x, ds.area_y), model_predictor(pac)});
    methods.push_back({"MLP", evaluate_model(mlp, ds.val, ds.beams, ds.area_x, ds.area_y), model_predictor(mlp)});
    methods.push_back({"IDW-RSRP", evaluate_idw_rsrp(ckm, ds.val, ds.beams), idw_rsrp_predictor(ckm, ds.beams)});
    methods.push_back({"IDW-MCPP", evaluate_idw_mcpp(ckm, ds.val, cfg.array, ds.beams),
                       idw_mcpp_predictor(ckm, cfg.array, ds.beams)});

    write_with(out_path(cfg, "table.csv"), [&](std::ostream &os) {
        os << "method,mae_db,storage_bytes,inference_ms\n";
        for (const auto &m : methods)
            os << m.name << ',' << format_double(m.metrics.mae_db) << ',' << m.metrics.storage_bytes << ','
               << format_double(m.metrics.inference_ms) << '\n';
    });
    json mj = json::object();
    for (const auto &m : methods)
    {
        json e = m.metrics.to_json();
        e.erase("inference_ms");
        mj[m.name] = e;
    }
    write_text_file(out_path(cfg, "metrics_compare.json").string(), mj.dump(2) + "\n");
    for (const auto &m : methods)
        log << std::left << std::setw(10) << m.name << " MAE " << std::fixed << std::setprecision(3)
            << m.metrics.mae_db << " dB, " << m.metrics.storage_bytes << " bytes, " << m.metrics.inference_ms
            << " ms\n";
    log.unsetf(std::ios::floatfield);

    // Heatmaps over the whole grid: ground truth, predictions and their
    // differences for the configured beams.
    const McppField &truth_field = a.scene.labels(cfg);
    const fs::path hm = out_path(cfg, "heatmaps");
    fs::create_directories(hm);
    for (int b : cfg.heatmap_beams)
    {
        const auto beam = static_cast<std::size_t>(b);
        std::vector<double> truth(truth_field.size());
        for (std::size_t i = 0; i < truth.size(); ++i)
            truth[i] = to_db(rsrp_mean(truth_field.anchors[i], cfg.array, ds.beams[beam]));
        const std::string suffix = "_b" + std::to_string(b) + ".csv";
        write_with(hm / ("truth" + suffix),
                   [&](std::ostream &os) { write_grid_csv(os, truth_field.nx, truth_field.ny, truth); });
        for (const auto &m : methods)
        {
            const auto pred = grid_prediction(m.predict, truth_field, beam);
            write_with(hm / (m.name + suffix),
                       [&](std::ostream &os) { write_grid_csv(os, truth_field.nx, truth_field.ny, pred); });
            write_with(hm / ("diff_" + m.name + suffix), [&](std::ostream &os) {
                write_grid_csv(os, truth_field.nx, truth_field.ny, grid_difference(pred, truth));
            });
        }
    }

    // Sample-count sweep: every method retrained or rebuilt on a subset of
    // the training anchors. PaC calibrates the stored pretrained model.
    write_with(out_path(cfg, "sweep.csv"), [&](std::ostream &os) {
        os << "method,fraction,train_anchors,mae_db\n";
        for (double f : cfg.sweep_fractions)
        {
            const Dataset sub = subsample_train(ds, f, cfg.seed + 7);
            const std::vector<std::pair<std::string, double>> rows{
                {"NBF", run_e2e_nbf(cfg, sub).metrics.mae_db},
                {"PaC-NBF", run_calibrate(cfg, pre, sub).metrics.mae_db},
                {"MLP", run_mlp(cfg, sub).metrics.mae_db},
                {"IDW-RSRP", run_idw_rsrp(cfg, a.scene, sub).mae_db},
                {"IDW-MCPP", run_idw_mcpp(cfg, a.scene, sub).mae_db}};
            for (const auto &[name, mae] : rows)
            {
                os << name << ',' << format_double(f) << ',' << sub.train.size() << ',' << format_double(mae) << '\n';
                log << "sweep " << name << " fraction " << f << ": MAE " << mae << " dB\n";
            }
        }
    });
    return kExitOk;
}

int run_cli(int argc, char **argv, std::ostream &out, std::ostream &err)
{
    CLI::App app{"Neural beam field experiments"};
    app.require_subcommand(1, 1);
    CommandOptions opt;
    std::uint64_t seed = 0;
    std::string out_dir, ref;
    int n_mc = 0;
    auto add_common = [&](CLI::App *sub) {
        sub->add_option("--config", opt.config_path, "experiment configuration (JSON)")->required();
        sub->add_option("--seed", seed, "override the master seed");
        sub->add_option("--out", out_dir, "output directory");
    };
    const std::vector<std::pair<std::string, std::string>> cmds{
        {"gen", "generate the site, its hybrid perturbation and the datasets"},
        {"mc-validate", "check the closed-form statistics against Monte Carlo"},
        {"pretrain", "pretrain the NBF on MCPP labels"},
        {"train", "train the NBF and the MLP baseline end to end"},
        {"calibrate", "calibrate a pretrained NBF on RSRP labels"},
        {"compare", "compare all methods, write heatmaps and the sample sweep"}};
    std::map<std::string, CLI::App *> subs;
    for (const auto &[name, help] : cmds)
    {
        CLI::App *sub = app.add_subcommand(name, help);
        add_common(sub);
        subs[name] = sub;
    }
    subs["mc-validate"]->add_option("--n-mc", n_mc, "Monte Carlo realisations per case")->check(CLI::Range(2, 1 << 30));
    subs["calibrate"]->add_option("--ref-checkpoint", ref, "pretrained reference checkpoint");

    try
    {
        app.parse(argc, argv);
    }
    catch (const CLI::CallForHelp &e)
    {
        out << app.help();
        return kExitOk;
    }
    catch (const CLI::ParseError &e)
    {
        err << "error: " << e.what() << "\n" << app.help();
        return kExitUsage;
    }

    std::string name;
    for (const auto &[n, sub] : subs)
        if (sub->parsed())
            name = n;
    try
    {
        ExperimentConfig cfg = load_config(opt.config_path);
        if (subs[name]->count("--seed") > 0)
            cfg.apply_seed(seed);
        if (subs[name]->count("--out") > 0)
            cfg.out_dir = out_dir;
        if (name == "mc-validate" && subs[name]->count("--n-mc") > 0)
            cfg.n_mc = n_mc;
        if (name == "gen")
            return cmd_gen(cfg, out);
        if (name == "mc-validate")
            return cmd_mc_validate(cfg, out);
        if (name == "pretrain")
            return cmd_pretrain(cfg, out);
        if (name == "train")
            return cmd_train(cfg, out);
        if (name == "calibrate")
            return cmd_calibrate(cfg, ref, out);
        return cmd_compare(cfg, out);
    }
    catch (const ConfigError &e)
    {
        err << "error: " << e.what() << '\n';
        return kExitUsage;
    }
    catch (const UsageError &e)
    {
        err << "error: " << e.what() << '\n';
        return kExitUsage;
    }
    catch (const std::invalid_argument &e)
    {
        err << "error: " << e.what() << '\n';
        return kExitUsage;
    }
}

} // namespace nbf
