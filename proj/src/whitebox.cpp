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

#include "nbf/whitebox.hpp"

#include <cmath>
#include <cstdint>
#include <stdexcept>

namespace nbf
{

namespace
{

// psi reduced to [-pi, pi); S_N is 2 pi periodic.
double wrap_phase(double psi)
{
    double r = std::fmod(psi + kPi, 2.0 * kPi);
    if (r < 0.0)
        r += 2.0 * kPi;
    return r - kPi;
}

// sin(N r / 2) / sin(r / 2) for r in [-pi, pi).
double dirichlet_ratio(double r, int n)
{
    const double half = 0.5 * r;
    const double s = std::sin(half);
    if (std::abs(s) < 1e-6)
    {
        const double nn = static_cast<double>(n);
        const double n2 = nn * nn;
        const double r2 = r * r;
        return nn - nn * (n2 - 1.0) * r2 / 24.0 + nn * (n2 - 1.0) * (3.0 * n2 - 7.0) * r2 * r2 / 5760.0;
    }
    return std::sin(n * half) / s;
}

} // namespace

cplx s_n(double psi, int n)
{
    if (n < 1)
        throw std::invalid_argument("s_n: n must be >= 1");
    const double r = wrap_phase(psi);
    return std::polar(1.0, 0.5 * (n - 1) * r) * dirichlet_ratio(r, n);
}

double s_n_power(double psi, int n)
{
    const double d = dirichlet_ratio(wrap_phase(psi), n);
    return d * d;
}

double s_n_power_deriv(double psi, int n)
{
    double acc = 0.0;
    for (int m = 1; m < n; ++m)
        acc += static_cast<double>((n - m) * m) * std::sin(m * psi);
    return -2.0 * acc;
}

PathGain path_gain(const ScpEntry &scp, const ArrayConfig &cfg, const PanelBasis &basis, const BeamSpec &beam)
{
    const SpatialFreq z = spatial_freq(cfg, basis, scp.u_tx);
    const double delta_sq =
        s_n_power(z.zeta_y + beam.xi_y, cfg.n_y) * s_n_power(z.zeta_z + beam.xi_z, cfg.n_z) / cfg.n_tx();
    return {element_gain(scp.u_tx, basis, cfg.erp) * scp.p * delta_sq, delta_sq};
}

PathGain path_gain(const ScpEntry &scp, const ArrayConfig &cfg, const BeamSpec &beam)
{
    return path_gain(scp, cfg, cfg.basis(), beam);
}

namespace
{

void check_gates(const Mcpp &mcpp, std::span<const double> gates)
{
    if (!gates.empty() && gates.size() != mcpp.paths.size())
        throw std::invalid_argument("rsrp_mean: gate count does not match path count");
}

} // namespace

double rsrp_mean(const Mcpp &mcpp, const ArrayConfig &cfg, const BeamSpec &beam, std::span<const double> gates)
{
    check_gates(mcpp, gates);
    const PanelBasis basis = cfg.basis();
    double mean = 0.0;
    for (std::size_t i : canonical_order(mcpp))
    {
        const double g = gates.empty() ? 1.0 : gates[i];
        mean += g * path_gain(mcpp.paths[i], cfg, basis, beam).gamma;
    }
    return mean;
}

RsrpStats rsrp_stats(const Mcpp &mcpp, const ArrayConfig &cfg, const BeamSpec &beam)
{
    const PanelBasis basis = cfg.basis();
    double sum = 0.0, sum_sq = 0.0;
    for (std::size_t i : canonical_order(mcpp))
    {
        const double gamma = path_gain(mcpp.paths[i], cfg, basis, beam).gamma;
        sum += gamma;
        sum_sq += gamma * gamma;
    }
    return {sum, std::max(sum * sum - sum_sq, 0.0)};
}

double rsrp_variance(const Mcpp &mcpp, const ArrayConfig &cfg, const BeamSpec &beam)
{
    return rsrp_stats(mcpp, cfg, beam).variance;
}

namespace
{

struct GammaGrad
{
    double gamma_per_p; // G |Delta|^2
    Vec3 d_gamma_du;    // d(gamma)/d(u_tx), with p applied
};

GammaGrad gamma_grad(const Vec3 &u, double p, const ArrayConfig &cfg, const PanelBasis &basis,
                     const BeamSpec &beam)
{
    const double k = 2.0 * kPi * cfg.f_c / kSpeedOfLight;
    const SpatialFreq z = spatial_freq(cfg, basis, u);
    const double psi_y = z.zeta_y + beam.xi_y;
    const double psi_z = z.zeta_z + beam.xi_z;
    const double sy = s_n_power(psi_y, cfg.n_y);
    const double sz = s_n_power(psi_z, cfg.n_z);
    const double dsy = s_n_power_deriv(psi_y, cfg.n_y);
    const double dsz = s_n_power_deriv(psi_z, cfg.n_z);
    const double inv_n = 1.0 / cfg.n_tx();
    const GainWithGrad g = element_gain_grad(u, basis, cfg.erp);

    const double delta_sq = sy * sz * inv_n;
    const Vec3 d_delta = (basis.h * (k * cfg.d_y * dsy * sz) + basis.v * (k * cfg.d_z * sy * dsz)) * inv_n;
    return {g.gain * delta_sq, (g.grad * delta_sq + d_delta * g.gain) * p};
}

} // namespace

std::vector<PathMeanGrad> rsrp_mean_grad(const Mcpp &mcpp, const ArrayConfig &cfg, const BeamSpec &beam,
                                         std::span<const double> gates)
{
    check_gates(mcpp, gates);
    const PanelBasis basis = cfg.basis();
    std::vector<PathMeanGrad> out(mcpp.paths.size());
    for (std::size_t i = 0; i < mcpp.paths.size(); ++i)
    {
        const ScpEntry &s = mcpp.paths[i];
        if (!s.exists)
            continue;
        const double g = gates.empty() ? 1.0 : gates[i];
        const GammaGrad gg = gamma_grad(s.u_tx, s.p, cfg, basis, beam);
        out[i].d_p = g * gg.gamma_per_p;
        out[i].d_u_tx = gg.d_gamma_du * g;
        out[i].d_gate = gg.gamma_per_p * s.p;
    }
    return out;
}

std::vector<double> rsrp_mean_table_serial(std::span<const Mcpp> mcpps, const ArrayConfig &cfg,
                                           std::span<const BeamSpec> beams)
{
    std::vector<double> out(mcpps.size() * beams.size());
    for (std::size_t a = 0; a < mcpps.size(); ++a)
        for (std::size_t b = 0; b < beams.size(); ++b)
            out[a * beams.size() + b] = rsrp_mean(mcpps[a], cfg, beams[b]);
    return out;
}

std::vector<double> rsrp_mean_table(std::span<const Mcpp> mcpps, const ArrayConfig &cfg,
                                    std::span<const BeamSpec> beams)
{
    std::vector<double> out(mcpps.size() * beams.size());
    const PanelBasis basis = cfg.basis();
    const auto n = static_cast<std::int64_t>(mcpps.size());
#pragma omp parallel for schedule(dynamic, 16)
    for (std::int64_t a = 0; a < n; ++a)
    {
        const Mcpp &m = mcpps[a];
        const auto order = canonical_order(m);
        for (std::size_t b = 0; b < beams.size(); ++b)
        {
            double mean = 0.0;
            for (std::size_t i : order)
                mean += path_gain(m.paths[i], cfg, basis, beams[b]).gamma;
            out[a * beams.size() + b] = mean;
        }
    }
    return out;
}

void whitebox_mean_forward(const WhiteboxBatch &in, const ArrayConfig &cfg, std::span<const BeamSpec> beams,
                           std::span<double> mean_out)
{
    const std::size_t nb = beams.size();
    if (mean_out.size() != in.batch * nb)
        throw std::invalid_argument("whitebox_mean_forward: output size mismatch");
    const PanelBasis basis = cfg.basis();
    const auto batch = static_cast<std::int64_t>(in.batch);
#pragma omp parallel for schedule(static)
    for (std::int64_t b = 0; b < batch; ++b)
    {
        for (std::size_t k = 0; k < nb; ++k)
            mean_out[b * nb + k] = 0.0;
        for (std::size_t l = 0; l < in.paths; ++l)
        {
            const std::size_t pl = b * in.paths + l;
            const Vec3 u{in.u_tx[3 * pl], in.u_tx[3 * pl + 1], in.u_tx[3 * pl + 2]};
            const double weight = in.p[pl] * in.gate[pl];
            const double g = element_gain(u, basis, cfg.erp);
            const SpatialFreq z = spatial_freq(cfg, basis, u);
            for (std::size_t k = 0; k < nb; ++k)
            {
                const double delta_sq = s_n_power(z.zeta_y + beams[k].xi_y, cfg.n_y) *
                                        s_n_power(z.zeta_z + beams[k].xi_z, cfg.n_z) / cfg.n_tx();
                mean_out[b * nb + k] += weight * g * delta_sq;
            }
        }
    }
}

void whitebox_mean_backward(const WhiteboxBatch &in, const ArrayConfig &cfg, std::span<const BeamSpec> beams,
                            std::span<const double> grad_mean, std::span<double> grad_u_tx, std::span<double> grad_p,
                            std::span<double> grad_gate)
{
    const std::size_t nb = beams.size();
    const PanelBasis basis = cfg.basis();
    const auto batch = static_cast<std::int64_t>(in.batch);
#pragma omp parallel for schedule(static)
    for (std::int64_t b = 0; b < batch; ++b)
    {
        for (std::size_t l = 0; l < in.paths; ++l)
        {
            const std::size_t pl = b * in.paths + l;
            const Vec3 u{in.u_tx[3 * pl], in.u_tx[3 * pl + 1], in.u_tx[3 * pl + 2]};
            const double p = in.p[pl];
            const double gate = in.gate[pl];
            double d_p = 0.0, d_gate = 0.0;
            Vec3 d_u{};
            for (std::size_t k = 0; k < nb; ++k)
            {
                const double gm = grad_mean[b * nb + k];
                if (gm == 0.0)
                    continue;
                const GammaGrad gg = gamma_grad(u, p, cfg, basis, beams[k]);
                d_p += gm * gate * gg.gamma_per_p;
                d_gate += gm * p * gg.gamma_per_p;
                d_u += gg.d_gamma_du * (gm * gate);
            }
            if (!grad_p.empty())
                grad_p[pl] += d_p;
            if (!grad_gate.empty())
                grad_gate[pl] += d_gate;
            if (!grad_u_tx.empty())
            {
                grad_u_tx[3 * pl] += d_u.x;
                grad_u_tx[3 * pl + 1] += d_u.y;
                grad_u_tx[3 * pl + 2] += d_u.z;
            }
        }
    }
}

} // namespace nbf
