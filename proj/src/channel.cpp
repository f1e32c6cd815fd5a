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

#include "nbf/channel.hpp"

#include "nbf/rng.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>
#include <tuple>

namespace nbf
{

double to_db(double linear) { return 10.0 * std::log10(linear + kPowerFloor); }
double from_db(double db) { return std::pow(10.0, db / 10.0); }

std::size_t Mcpp::existing_count() const
{
    return static_cast<std::size_t>(std::count_if(paths.begin(), paths.end(), [](const ScpEntry &s) { return s.exists; }));
}

double Mcpp::total_power() const
{
    double total = 0.0;
    for (std::size_t i : canonical_order(*this))
        total += paths[i].p;
    return total;
}

bool canonical_less(const ScpEntry &a, const ScpEntry &b)
{
    if (a.p != b.p)
        return a.p > b.p;
    return std::tie(a.tau, a.u_tx.x, a.u_tx.y, a.u_tx.z, a.u_rx.x, a.u_rx.y, a.u_rx.z) <
           std::tie(b.tau, b.u_tx.x, b.u_tx.y, b.u_tx.z, b.u_rx.x, b.u_rx.y, b.u_rx.z);
}

std::vector<std::size_t> canonical_order(const Mcpp &mcpp)
{
    std::vector<std::size_t> idx;
    idx.reserve(mcpp.paths.size());
    for (std::size_t i = 0; i < mcpp.paths.size(); ++i)
        if (mcpp.paths[i].exists)
            idx.push_back(i);
    std::stable_sort(idx.begin(), idx.end(),
                     [&](std::size_t a, std::size_t b) { return canonical_less(mcpp.paths[a], mcpp.paths[b]); });
    return idx;
}

Mcpp canonicalized(const Mcpp &mcpp)
{
    Mcpp out;
    for (std::size_t i : canonical_order(mcpp))
        out.paths.push_back(mcpp.paths[i]);
    return out;
}

PhaseVector sample_phases(const Mcpp &mcpp, std::uint64_t seed, std::uint64_t sample_index)
{
    const auto order = canonical_order(mcpp);
    std::vector<std::size_t> rank(mcpp.paths.size(), 0);
    for (std::size_t r = 0; r < order.size(); ++r)
        rank[order[r]] = r;

    PhaseVector phases;
    phases.reserve(order.size());
    for (std::size_t i = 0; i < mcpp.paths.size(); ++i)
        if (mcpp.paths[i].exists)
            phases.push_back(2.0 * kPi * counter_uniform(seed, sample_index, rank[i]));
    return phases;
}

namespace
{

// exp(-j 2 pi f_c tau) with the cycle count reduced first.
cplx delay_phasor(double f_c, double tau)
{
    const double cycles = f_c * tau;
    return std::polar(1.0, -2.0 * kPi * (cycles - std::floor(cycles)));
}

} // namespace

cplx path_amplitude(const ScpEntry &scp, const ArrayConfig &cfg, const PanelBasis &basis, const CVec &w)
{
    const double g = element_gain(scp.u_tx, basis, cfg.erp);
    const cplx af = bilinear(arv(cfg, basis, scp.u_tx), w);
    return std::sqrt(g * scp.p) * delay_phasor(cfg.f_c, scp.tau) * af;
}

double instant_rsrp(const Mcpp &mcpp, const PhaseVector &phases, const ArrayConfig &cfg, const BeamSpec &beam)
{
    const std::size_t n_exist = mcpp.existing_count();
    if (phases.size() != n_exist)
        throw std::invalid_argument("instant_rsrp: got " + std::to_string(phases.size()) + " phases for " +
                                    std::to_string(n_exist) + " existing paths");

    // phase slot of each existing path in storage order
    std::vector<std::size_t> slot(mcpp.paths.size(), 0);
    for (std::size_t i = 0, k = 0; i < mcpp.paths.size(); ++i)
        if (mcpp.paths[i].exists)
            slot[i] = k++;

    const PanelBasis basis = cfg.basis();
    const CVec w = dft_weight(beam, cfg);
    cplx field{};
    for (std::size_t i : canonical_order(mcpp))
        field += path_amplitude(mcpp.paths[i], cfg, basis, w) * std::polar(1.0, phases[slot[i]]);
    return std::norm(field);
}

namespace
{

McStats reduce_samples(const std::vector<double> &samples)
{
    const double n = static_cast<double>(samples.size());
    double sum = 0.0;
    for (double s : samples)
        sum += s;
    const double mean = sum / n;
    double ss = 0.0;
    for (double s : samples)
        ss += (s - mean) * (s - mean);
    return {mean, std::sqrt(ss / (n - 1.0))};
}

void check_n_mc(int n_mc)
{
    if (n_mc < 2)
        throw std::invalid_argument("mc_stats: n_mc must be >= 2, got " + std::to_string(n_mc));
}

} // namespace

McStats mc_stats(const Mcpp &mcpp, const ArrayConfig &cfg, const BeamSpec &beam, int n_mc, std::uint64_t seed)
{
    check_n_mc(n_mc);
    const auto order = canonical_order(mcpp);
    if (order.empty())
        return {};

    const PanelBasis basis = cfg.basis();
    const CVec w = dft_weight(beam, cfg);
    std::vector<cplx> amp;
    amp.reserve(order.size());
    for (std::size_t i : order)
        amp.push_back(path_amplitude(mcpp.paths[i], cfg, basis, w));

    std::vector<double> samples(static_cast<std::size_t>(n_mc));
    const auto n_paths = static_cast<std::int64_t>(amp.size());
#pragma omp parallel for schedule(static)
    for (std::int64_t s = 0; s < n_mc; ++s)
    {
        cplx field{};
        for (std::int64_t r = 0; r < n_paths; ++r)
            field += amp[r] * std::polar(1.0, 2.0 * kPi * counter_uniform(seed, s, r));
        samples[s] = std::norm(field);
    }
    return reduce_samples(samples);
}

McStats mc_stats_serial(const Mcpp &mcpp, const ArrayConfig &cfg, const BeamSpec &beam, int n_mc,
                        std::uint64_t seed)
{
    check_n_mc(n_mc);
    if (mcpp.existing_count() == 0)
        return {};
    std::vector<double> samples;
    samples.reserve(static_cast<std::size_t>(n_mc));
    for (int s = 0; s < n_mc; ++s)
        samples.push_back(instant_rsrp(mcpp, sample_phases(mcpp, seed, static_cast<std::uint64_t>(s)), cfg, beam));
    return reduce_samples(samples);
}

} // namespace nbf
