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

#include "nbf/model.hpp"

#include "nbf/io.hpp"
#include "nbf/rng.hpp"
#include "nbf/whitebox.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace nbf
{

using ad::Tensor;
using nlohmann::json;

namespace
{

constexpr double kDbPerNeper = 10.0 / std::numbers::ln10;

std::vector<double> normal_values(Rng &rng, std::size_t n, double stddev)
{
    std::vector<double> v(n);
    for (double &x : v)
        x = rng.normal() * stddev;
    return v;
}

// Same rounding as to_db, so hard-gated outputs match the scalar whitebox.
Tensor db_of(const Tensor &linear_power)
{
    std::vector<double> out(linear_power.size());
    for (std::size_t i = 0; i < out.size(); ++i)
        out[i] = to_db(linear_power.value()[i]);
    return ad::make_result(linear_power.shape(), std::move(out), {linear_power}, [linear_power](ad::Node &self) {
        auto &g = linear_power.node()->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i)
            g[i] += self.grad[i] * kDbPerNeper / (linear_power.value()[i] + kPowerFloor);
    });
}

} // namespace

void NbfConfig::validate() const
{
    if (d_model < 2 || d_model % 2 != 0)
        throw std::invalid_argument("nbf: d_model must be even and >= 2");
    if (n_heads < 1 || d_model % n_heads != 0)
        throw std::invalid_argument("nbf: d_model must be divisible by n_heads");
    if (n_blocks < 0 || mlp_ratio < 1)
        throw std::invalid_argument("nbf: n_blocks >= 0 and mlp_ratio >= 1 required");
    if (paths < 1)
        throw std::invalid_argument("nbf: paths (L) must be >= 1");
    if (!(tau_max > 0.0) || !(p_db_std > 0.0) || !(fourier_sigma > 0.0))
        throw std::invalid_argument("nbf: tau_max, p_db_std and fourier_sigma must be positive");
}

void to_json(json &j, const NbfConfig &c)
{
    j = {{"d_model", c.d_model},     {"n_blocks", c.n_blocks},   {"n_heads", c.n_heads},
         {"mlp_ratio", c.mlp_ratio}, {"paths", c.paths},         {"fourier_sigma", c.fourier_sigma},
         {"tau_max", c.tau_max},     {"p_db_mean", c.p_db_mean}, {"p_db_std", c.p_db_std},
         {"seed", c.seed}};
}

void from_json(const json &j, NbfConfig &c)
{
    for (const auto &item : j.items())
    {
        const std::string &k = item.key();
        if (k == "d_model")
            item.value().get_to(c.d_model);
        else if (k == "n_blocks")
            item.value().get_to(c.n_blocks);
        else if (k == "n_heads")
            item.value().get_to(c.n_heads);
        else if (k == "mlp_ratio")
            item.value().get_to(c.mlp_ratio);
        else if (k == "paths")
            item.value().get_to(c.paths);
        else if (k == "fourier_sigma")
            item.value().get_to(c.fourier_sigma);
        else if (k == "tau_max")
            item.value().get_to(c.tau_max);
        else if (k == "p_db_mean")
            item.value().get_to(c.p_db_mean);
        else if (k == "p_db_std")
            item.value().get_to(c.p_db_std);
        else if (k == "seed")
            item.value().get_to(c.seed);
        else
            throw std::invalid_argument("model: unknown key \"" + k + "\"");
    }
}

Mcpp McppPrediction::mcpp(std::size_t b, double tau_max) const
{
    Mcpp m;
    for (std::size_t l = 0; l < paths; ++l)
    {
        const std::size_t i = b * paths + l;
        if (!(logits.value()[i] > 0.0))
            continue;
        ScpEntry s;
        s.u_tx = {u_tx.value()[3 * i], u_tx.value()[3 * i + 1], u_tx.value()[3 * i + 2]};
        s.u_rx = {u_rx.value()[3 * i], u_rx.value()[3 * i + 1], u_rx.value()[3 * i + 2]};
        s.tau = tau_norm.value()[i] * tau_max;
        s.p = p.value()[i];
        m.paths.push_back(s);
    }
    return m;
}

std::size_t RsrpModel::parameter_count() const
{
    std::size_t n = 0;
    for (const Tensor &t : trainable())
        n += t.size();
    return n;
}

Tensor whitebox_mean(const Tensor &u_tx, const Tensor &p, const Tensor &gate, const ArrayConfig &cfg,
                     std::span<const BeamSpec> beams)
{
    if (p.ndim() != 2 || u_tx.shape() != ad::Shape{p.dim(0), p.dim(1), 3} || gate.shape() != p.shape())
        throw std::invalid_argument("whitebox_mean: expected u_tx [B, L, 3], p and gate [B, L]; got " +
                                    ad::shape_str(u_tx.shape()) + ", " + ad::shape_str(p.shape()) + ", " +
                                    ad::shape_str(gate.shape()));
    if (beams.empty())
        throw std::invalid_argument("whitebox_mean: no beams");
    const std::size_t batch = p.dim(0), paths = p.dim(1), k = beams.size();
    const WhiteboxBatch in{batch, paths, u_tx.value(), p.value(), gate.value()};
    std::vector<double> out(batch * k);
    whitebox_mean_forward(in, cfg, beams, out);
    std::vector<BeamSpec> beam_copy(beams.begin(), beams.end());
    return ad::make_result({batch, k}, std::move(out), {u_tx, p, gate},
                           [u_tx, p, gate, cfg, beam_copy, batch, paths](ad::Node &self) {
                               const WhiteboxBatch in{batch, paths, u_tx.value(), p.value(), gate.value()};
                               std::vector<double> scratch_u, scratch_p, scratch_g;
                               auto buffer = [](const Tensor &t, std::vector<double> &scratch) -> std::span<double> {
                                   if (t.requires_grad())
                                       return t.node()->grad_buffer();
                                   scratch.assign(t.size(), 0.0);
                                   return scratch;
                               };
                               whitebox_mean_backward(in, cfg, beam_copy, self.grad, buffer(u_tx, scratch_u),
                                                      buffer(p, scratch_p), buffer(gate, scratch_g));
                           });
}

NbfModel::NbfModel(const NbfConfig &cfg, const ArrayConfig &array) : cfg_(cfg), array_(array)
{
    cfg_.validate();
    array_.validate();
    const auto d = static_cast<std::size_t>(cfg_.d_model);
    const auto hidden = d * static_cast<std::size_t>(cfg_.mlp_ratio);
    const auto L = static_cast<std::size_t>(cfg_.paths);
    Rng rng(counter_hash(cfg_.seed, 0x4e4246ULL));

    fourier_ = normal_values(rng, d, cfg_.fourier_sigma);

    auto add = [&](const std::string &name, ad::Shape shape, std::vector<double> v) {
        params_.emplace_back(name, Tensor::parameter(std::move(shape), std::move(v)));
    };
    auto add_linear = [&](const std::string &prefix, std::size_t in, std::size_t out, double gain = 1.0) {
        add(prefix + ".w", {in, out}, normal_values(rng, in * out, gain / std::sqrt(static_cast<double>(in))));
        add(prefix + ".b", {out}, std::vector<double>(out, 0.0));
    };
    auto add_ln = [&](const std::string &prefix) {
        add(prefix + ".g", {d}, std::vector<double>(d, 1.0));
        add(prefix + ".b", {d}, std::vector<double>(d, 0.0));
    };

    add_linear("ue_proj", d, d);
    add("target_tokens", {L, d}, normal_values(rng, L * d, 1.0));
    const double depth_gain = 1.0 / std::sqrt(2.0 * std::max(1, cfg_.n_blocks));
    for (int i = 0; i < cfg_.n_blocks; ++i)
    {
        const std::string p = "blocks." + std::to_string(i);
        add_ln(p + ".ln1");
        add_linear(p + ".attn.qkv", d, 3 * d);
        add_linear(p + ".attn.out", d, d, depth_gain);
        add_ln(p + ".ln2");
        add_linear(p + ".mlp.fc1", d, hidden);
        add_linear(p + ".mlp.fc2", hidden, d, depth_gain);
    }
    add_ln("ln_f");
    add_linear("reg.fc1", d, d);
    add_linear("reg.fc2", d, 8);
    add_linear("cls", d, 1, 0.1);
}

const Tensor &NbfModel::param(const std::string &name) const
{
    for (const auto &[n, t] : params_)
        if (n == name)
            return t;
    throw std::out_of_range("nbf: no parameter named '" + name + "'");
}

NbfModel NbfModel::clone() const
{
    NbfModel m(cfg_, array_);
    m.load_values(*this);
    return m;
}

void NbfModel::set_fourier_matrix(std::vector<double> b)
{
    if (b.size() != static_cast<std::size_t>(cfg_.d_model))
        throw std::invalid_argument("nbf: Fourier matrix must have d_model / 2 x 2 entries");
    fourier_ = std::move(b);
}

void NbfModel::load_values(const NbfModel &other)
{
    if (other.params_.size() != params_.size())
        throw std::invalid_argument("nbf: parameter layouts differ");
    for (std::size_t i = 0; i < params_.size(); ++i)
    {
        if (params_[i].first != other.params_[i].first ||
            params_[i].second.shape() != other.params_[i].second.shape())
            throw std::invalid_argument("nbf: parameter '" + params_[i].first + "' differs in layout");
        params_[i].second.mutable_value() = other.params_[i].second.value();
    }
    fourier_ = other.fourier_;
}

std::vector<double> NbfModel::fourier_embed(std::span<const Position> pos) const
{
    const std::size_t half = static_cast<std::size_t>(cfg_.d_model) / 2;
    std::vector<double> out(pos.size() * 2 * half);
    for (std::size_t b = 0; b < pos.size(); ++b)
        for (std::size_t i = 0; i < half; ++i)
        {
            const double arg = 2.0 * kPi * (fourier_[2 * i] * pos[b][0] + fourier_[2 * i + 1] * pos[b][1]);
            out[b * 2 * half + i] = std::sin(arg);
            out[b * 2 * half + half + i] = std::cos(arg);
        }
    return out;
}

Tensor NbfModel::linear(const Tensor &x, const std::string &prefix) const
{
    return ad::add(ad::matmul(x, param(prefix + ".w")), param(prefix + ".b"));
}

McppPrediction NbfModel::forward_mcpp(std::span<const Position> pos) const
{
    using namespace ad;
    const std::size_t B = pos.size();
    if (B == 0)
        throw std::invalid_argument("nbf: empty position batch");
    const auto d = static_cast<std::size_t>(cfg_.d_model);
    const auto L = static_cast<std::size_t>(cfg_.paths);
    const auto H = static_cast<std::size_t>(cfg_.n_heads);
    const std::size_t T = L + 1, dh = d / H;

    const Tensor emb = Tensor::constant({B, 1, d}, fourier_embed(pos));
    Tensor x = concat({linear(emb, "ue_proj"), expand(param("target_tokens"), B)}, 1);

    const double att_scale = 1.0 / std::sqrt(static_cast<double>(dh));
    for (int i = 0; i < cfg_.n_blocks; ++i)
    {
        const std::string p = "blocks." + std::to_string(i);
        const Tensor xn = layer_norm(x, param(p + ".ln1.g"), param(p + ".ln1.b"));
        const Tensor qkv = linear(xn, p + ".attn.qkv");
        auto heads = [&](std::size_t part) {
            return permute(reshape(slice(qkv, 2, part * d, d), {B, T, H, dh}), {0, 2, 1, 3});
        };
        const Tensor att = softmax(scale(matmul(heads(0), transpose(heads(1))), att_scale));
        const Tensor ctx = reshape(permute(matmul(att, heads(2)), {0, 2, 1, 3}), {B, T, d});
        x = add(x, linear(ctx, p + ".attn.out"));
        const Tensor xn2 = layer_norm(x, param(p + ".ln2.g"), param(p + ".ln2.b"));
        x = add(x, linear(gelu(linear(xn2, p + ".mlp.fc1")), p + ".mlp.fc2"));
    }

    McppPrediction out;
    out.batch = B;
    out.paths = L;
    out.features = layer_norm(x, param("ln_f.g"), param("ln_f.b"));
    const Tensor targets = slice(out.features, 1, 1, L);
    const Tensor raw = linear(gelu(linear(targets, "reg.fc1")), "reg.fc2");
    out.u_tx = normalize_last(slice(raw, 2, 0, 3));
    out.u_rx = normalize_last(slice(raw, 2, 3, 3));
    out.tau_norm = sigmoid(reshape(slice(raw, 2, 6, 1), {B, L}));
    out.p_z = reshape(slice(raw, 2, 7, 1), {B, L});
    out.p = exp(scale(add_scalar(scale(out.p_z, cfg_.p_db_std), cfg_.p_db_mean), 1.0 / kDbPerNeper));
    out.logits = reshape(linear(targets, "cls"), {B, L});
    return out;
}

Tensor NbfModel::rsrp_db(const McppPrediction &pred, std::span<const BeamSpec> beams, bool training,
                         double gate_sharpness) const
{
    Tensor gate;
    if (training)
        gate = ad::sigmoid(gate_sharpness == 1.0 ? pred.logits : ad::scale(pred.logits, gate_sharpness));
    else
    {
        std::vector<double> hard(pred.logits.size());
        for (std::size_t i = 0; i < hard.size(); ++i)
            hard[i] = pred.logits.value()[i] > 0.0 ? 1.0 : 0.0;
        gate = Tensor::constant(pred.logits.shape(), std::move(hard));
    }
    return db_of(whitebox_mean(pred.u_tx, pred.p, gate, array_, beams));
}

Tensor NbfModel::predict_db(std::span<const Position> pos, std::span<const BeamSpec> beams, bool training) const
{
    return rsrp_db(forward_mcpp(pos), beams, training);
}

std::vector<Tensor> NbfModel::trainable() const
{
    std::vector<Tensor> out;
    for (const auto &[n, t] : params_)
        out.push_back(t);
    return out;
}

Checkpoint NbfModel::to_checkpoint() const
{
    Checkpoint c;
    c.meta = {{"kind", kind()}, {"config", cfg_}, {"array", array_}};
    c.tensors.push_back({"fourier.B", {static_cast<std::size_t>(cfg_.d_model) / 2, 2}, fourier_});
    for (const auto &[n, t] : params_)
        c.tensors.push_back({n, t.shape(), t.value()});
    return c;
}

NbfModel NbfModel::from_checkpoint(const Checkpoint &ckpt)
{
    if (ckpt.meta.value("kind", "") != "nbf")
        throw std::invalid_argument("nbf: checkpoint is not an NBF model");
    NbfModel m(ckpt.meta.at("config").get<NbfConfig>(), ckpt.meta.at("array").get<ArrayConfig>());
    m.set_fourier_matrix(ckpt.at("fourier.B").values);
    for (auto &[name, t] : m.params_)
    {
        const NamedTensor &src = ckpt.at(name);
        if (src.shape != t.shape())
            throw std::invalid_argument("nbf: checkpoint tensor '" + name + "' has shape " + ad::shape_str(src.shape) +
                                        ", expected " + ad::shape_str(t.shape()));
        t.mutable_value() = src.values;
    }
    return m;
}

MlpConfig MlpConfig::sized_for(std::size_t min_params, int depth)
{
    if (depth < 1)
        throw std::invalid_argument("mlp: depth must be >= 1");
    MlpConfig c;
    for (int w = 1;; ++w)
    {
        c.hidden.assign(static_cast<std::size_t>(depth), w);
        if (c.parameter_count() >= min_params)
            return c;
    }
}

std::size_t MlpConfig::parameter_count() const
{
    std::size_t n = 0, in = MlpModel::kInputWidth;
    for (int h : hidden)
    {
        n += in * static_cast<std::size_t>(h) + static_cast<std::size_t>(h);
        in = static_cast<std::size_t>(h);
    }
    return n + in + 1;
}

void to_json(json &j, const MlpConfig &c)
{
    j = {{"hidden", c.hidden}, {"out_mean", c.out_mean}, {"out_std", c.out_std}, {"seed", c.seed}};
}

void from_json(const json &j, MlpConfig &c)
{
    for (const auto &item : j.items())
    {
        const std::string &k = item.key();
        if (k == "hidden")
            item.value().get_to(c.hidden);
        else if (k == "out_mean")
            item.value().get_to(c.out_mean);
        else if (k == "out_std")
            item.value().get_to(c.out_std);
        else if (k == "seed")
            item.value().get_to(c.seed);
        else
            throw std::invalid_argument("mlp: unknown key \"" + k + "\"");
    }
}

MlpModel::MlpModel(const MlpConfig &cfg) : cfg_(cfg)
{
    if (cfg_.hidden.empty())
        throw std::invalid_argument("mlp: need at least one hidden layer");
    Rng rng(counter_hash(cfg_.seed, 0x4d4c50ULL));
    std::size_t in = kInputWidth;
    std::vector<std::size_t> widths;
    for (int h : cfg_.hidden)
    {
        if (h < 1)
            throw std::invalid_argument("mlp: hidden widths must be positive");
        widths.push_back(static_cast<std::size_t>(h));
    }
    widths.push_back(1);
    for (std::size_t out : widths)
    {
        weights_.push_back(Tensor::parameter({in, out}, normal_values(rng, in * out, 1.0 / std::sqrt(double(in)))));
        biases_.push_back(Tensor::parameter({out}, std::vector<double>(out, 0.0)));
        in = out;
    }
}

Tensor MlpModel::predict_db(std::span<const Position> pos, std::span<const BeamSpec> beams, bool) const
{
    const std::size_t B = pos.size(), K = beams.size();
    if (B == 0 || K == 0)
        throw std::invalid_argument("mlp: empty batch");
    std::vector<double> x(B * K * kInputWidth);
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t k = 0; k < K; ++k)
        {
            double *row = x.data() + (b * K + k) * kInputWidth;
            row[0] = pos[b][0];
            row[1] = pos[b][1];
            row[2] = std::sin(beams[k].xi_y);
            row[3] = std::cos(beams[k].xi_y);
            row[4] = std::sin(beams[k].xi_z);
            row[5] = std::cos(beams[k].xi_z);
        }
    Tensor h = Tensor::constant({B * K, kInputWidth}, std::move(x));
    for (std::size_t i = 0; i < weights_.size(); ++i)
    {
        h = ad::add(ad::matmul(h, weights_[i]), biases_[i]);
        if (i + 1 < weights_.size())
            h = ad::gelu(h);
    }
    return ad::add_scalar(ad::scale(ad::reshape(h, {B, K}), cfg_.out_std), cfg_.out_mean);
}

std::vector<Tensor> MlpModel::trainable() const
{
    std::vector<Tensor> out;
    for (std::size_t i = 0; i < weights_.size(); ++i)
    {
        out.push_back(weights_[i]);
        out.push_back(biases_[i]);
    }
    return out;
}

Checkpoint MlpModel::to_checkpoint() const
{
    Checkpoint c;
    c.meta = {{"kind", kind()}, {"config", cfg_}};
    for (std::size_t i = 0; i < weights_.size(); ++i)
    {
        c.tensors.push_back({"fc" + std::to_string(i) + ".w", weights_[i].shape(), weights_[i].value()});
        c.tensors.push_back({"fc" + std::to_string(i) + ".b", biases_[i].shape(), biases_[i].value()});
    }
    return c;
}

MlpModel MlpModel::from_checkpoint(const Checkpoint &ckpt)
{
    if (ckpt.meta.value("kind", "") != "mlp")
        throw std::invalid_argument("mlp: checkpoint is not an MLP model");
    MlpModel m(ckpt.meta.at("config").get<MlpConfig>());
    for (std::size_t i = 0; i < m.weights_.size(); ++i)
        for (Tensor *t : {&m.weights_[i], &m.biases_[i]})
        {
            const std::string name = "fc" + std::to_string(i) + (t == &m.weights_[i] ? ".w" : ".b");
            const NamedTensor &src = ckpt.at(name);
            if (src.shape != t->shape())
                throw std::invalid_argument("mlp: checkpoint tensor '" + name + "' has the wrong shape");
            t->mutable_value() = src.values;
        }
    return m;
}

std::unique_ptr<RsrpModel> load_model(const Checkpoint &ckpt)
{
    const std::string kind = ckpt.meta.value("kind", "");
    if (kind == "nbf")
        return std::make_unique<NbfModel>(NbfModel::from_checkpoint(ckpt));
    if (kind == "mlp")
        return std::make_unique<MlpModel>(MlpModel::from_checkpoint(ckpt));
    throw std::invalid_argument("checkpoint: unknown model kind '" + kind + "'");
}

} // namespace nbf
