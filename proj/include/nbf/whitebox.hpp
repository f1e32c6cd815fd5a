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

#include <span>
#include <vector>

namespace nbf
{

/// Closed-form beam RSRP statistics under independent uniform path phases.
///
/// For path l with spatial frequencies (zeta_y, zeta_z) and beam (xi_y, xi_z)
///
///   |Delta_l|^2 = |S_Ny(zeta_y + xi_y)|^2 |S_Nz(zeta_z + xi_z)|^2 / N_tx
///   gamma_l     = G(u_tx,l) p_l |Delta_l|^2
///   mean        = sum_l gamma_l
///   variance    = (sum_l gamma_l)^2 - sum_l gamma_l^2
///
/// where S_N(psi) = sum_{k<N} exp(j k psi). All reductions run in canonical
/// path order, so results do not depend on how the MCPP is stored.

struct RsrpStats
{
    double mean = 0.0;
    double variance = 0.0;
};

struct PathGain
{
    double gamma = 0.0;
    double delta_sq = 0.0;
};

/// Geometric phase sum; uses a Taylor expansion where sin(psi/2) vanishes.
cplx s_n(double psi, int n);

/// |S_N(psi)|^2 and its derivative, from the Fejer form
/// N + 2 sum_{m=1}^{N-1} (N - m) cos(m psi).
double s_n_power(double psi, int n);
double s_n_power_deriv(double psi, int n);

PathGain path_gain(const ScpEntry &scp, const ArrayConfig &cfg, const BeamSpec &beam);
PathGain path_gain(const ScpEntry &scp, const ArrayConfig &cfg, const PanelBasis &basis, const BeamSpec &beam);

/// Optional `gates` (one per stored path, in [0, 1]) scale each gamma.
double rsrp_mean(const Mcpp &mcpp, const ArrayConfig &cfg, const BeamSpec &beam, std::span<const double> gates = {});
double rsrp_variance(const Mcpp &mcpp, const ArrayConfig &cfg, const BeamSpec &beam);
RsrpStats rsrp_stats(const Mcpp &mcpp, const ArrayConfig &cfg, const BeamSpec &beam);

/// Partial derivatives of the mean with respect to one stored path.
/// The mean does not depend on delay or DOA, so those entries are zero.
struct PathMeanGrad
{
    double d_p = 0.0;
    Vec3 d_u_tx{};
    double d_tau = 0.0;
    Vec3 d_u_rx{};
    double d_gate = 0.0;
};

std::vector<PathMeanGrad> rsrp_mean_grad(const Mcpp &mcpp, const ArrayConfig &cfg, const BeamSpec &beam,
                                         std::span<const double> gates = {});

/// Mean RSRP for every (MCPP, beam) pair, row-major [mcpps x beams].
std::vector<double> rsrp_mean_table(std::span<const Mcpp> mcpps, const ArrayConfig &cfg,
                                    std::span<const BeamSpec> beams);
std::vector<double> rsrp_mean_table_serial(std::span<const Mcpp> mcpps, const ArrayConfig &cfg,
                                           std::span<const BeamSpec> beams);

/// Dense batched form used by the neural field. Paths are stored as
/// u_tx [B, L, 3], p [B, L], gate [B, L]; output mean is [B, K].
struct WhiteboxBatch
{
    std::size_t batch = 0;
    std::size_t paths = 0;
    std::span<const double> u_tx;
    std::span<const double> p;
    std::span<const double> gate;
};

void whitebox_mean_forward(const WhiteboxBatch &in, const ArrayConfig &cfg, std::span<const BeamSpec> beams,
                           std::span<double> mean_out);

/// Accumulates d(loss)/d(u_tx, p, gate) given d(loss)/d(mean).
void whitebox_mean_backward(const WhiteboxBatch &in, const ArrayConfig &cfg, std::span<const BeamSpec> beams,
                            std::span<const double> grad_mean, std::span<double> grad_u_tx, std::span<double> grad_p,
                            std::span<double> grad_gate);

} // namespace nbf
