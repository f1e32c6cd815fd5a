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

#include "nbf/array.hpp"

#include <cstdint>
#include <vector>

namespace nbf
{

inline constexpr double kPowerFloor = 1e-18;

/// Power in dB with a floor so that zero power stays finite.
double to_db(double linear);
double from_db(double db);

/// One propagation path: its 7-D condition (DOD, DOA, delay) and power.
struct ScpEntry
{
    Vec3 u_tx{1.0, 0.0, 0.0};
    Vec3 u_rx{-1.0, 0.0, 0.0};
    double tau = 0.0; ///< seconds
    double p = 0.0;   ///< linear power, alpha^2
    bool exists = true;

    bool operator==(const ScpEntry &) const = default;
};

/// Multi-path conditional power profile. Path order carries no meaning.
struct Mcpp
{
    std::vector<ScpEntry> paths;

    std::size_t existing_count() const;
    double total_power() const;
    bool operator==(const Mcpp &) const = default;
};

/// Strict weak order used everywhere a reduction runs over paths:
/// descending power, then delay, then u_tx and u_rx lexicographically.
bool canonical_less(const ScpEntry &a, const ScpEntry &b);

/// Indices of existing paths, sorted canonically.
std::vector<std::size_t> canonical_order(const Mcpp &mcpp);

/// Copy of the existing paths in canonical order.
Mcpp canonicalized(const Mcpp &mcpp);

/// One phase per existing path, in storage order. The phase of a path is
/// keyed by (seed, sample_index, canonical rank) so it follows the path,
/// not its storage slot.
using PhaseVector = std::vector<double>;
PhaseVector sample_phases(const Mcpp &mcpp, std::uint64_t seed, std::uint64_t sample_index = 0);

/// Complex per-path beam amplitude sqrt(G p) exp(-j 2 pi f_c tau) a^T w,
/// evaluated by explicit ARV/weight inner products.
cplx path_amplitude(const ScpEntry &scp, const ArrayConfig &cfg, const PanelBasis &basis, const CVec &w);

/// |sum_l A_l exp(j Phi_l)|^2 for one phase realisation.
double instant_rsrp(const Mcpp &mcpp, const PhaseVector &phases, const ArrayConfig &cfg, const BeamSpec &beam);

struct McStats
{
    double mean = 0.0;
    double std = 0.0;
};

/// Monte Carlo mean and unbiased standard deviation of instant_rsrp over
/// n_mc phase realisations. Realisations may run in parallel; the
/// reduction is always in realisation order.
McStats mc_stats(const Mcpp &mcpp, const ArrayConfig &cfg, const BeamSpec &beam, int n_mc, std::uint64_t seed);

/// Serial reference: draws phases and calls instant_rsrp per realisation.
McStats mc_stats_serial(const Mcpp &mcpp, const ArrayConfig &cfg, const BeamSpec &beam, int n_mc,
                        std::uint64_t seed);

} // namespace nbf
