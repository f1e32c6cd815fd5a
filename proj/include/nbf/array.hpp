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

#include "nbf/geom.hpp"

#include <complex>
#include <vector>

namespace nbf
{

using cplx = std::complex<double>;
using CVec = std::vector<cplx>;

/// Uniform planar array in the panel's (h, v) plane. Element (k_y, k_z)
/// sits at k_y d_y h + k_z d_z v and has flat index k_y n_z + k_z.
struct ArrayConfig
{
    int n_y = 8;
    int n_z = 4;
    double f_c = 3.5e9;
    double d_y = 0.5 * kSpeedOfLight / 3.5e9;
    double d_z = 0.5 * kSpeedOfLight / 3.5e9;
    PanelOrientation orientation{0.0, deg2rad(15.0), 0.0};
    ErpConfig erp{};

    int n_tx() const { return n_y * n_z; }
    double wavelength() const { return kSpeedOfLight / f_c; }
    PanelBasis basis() const { return panel_basis(orientation); }
    void validate() const;

    /// Half-wavelength spacing at carrier f_c.
    static ArrayConfig half_wavelength(int n_y, int n_z, double f_c, PanelOrientation o, ErpConfig erp);
};

/// DFT beam described by its per-axis spatial frequencies in [-pi, pi).
struct BeamSpec
{
    double xi_y = 0.0;
    double xi_z = 0.0;
    bool operator==(const BeamSpec &) const = default;
};

/// Per-axis array response: entry k = exp(j (2 pi f_c / c) k spacing (axis . u)).
CVec arv_axis(int n, double spacing, const Vec3 &axis_basis, const Vec3 &u, double f_c);

/// a = a_y (x) a_z.
CVec arv(const ArrayConfig &cfg, const Vec3 &u);
CVec arv(const ArrayConfig &cfg, const PanelBasis &basis, const Vec3 &u);

/// w = (1/sqrt(N)) w_y(xi_y) (x) w_z(xi_z), unit norm.
CVec dft_weight(const BeamSpec &beam, const ArrayConfig &cfg);

CVec kron(const CVec &a, const CVec &b);

/// Unconjugated inner product a^T w.
cplx bilinear(const CVec &a, const CVec &w);

struct SpatialFreq
{
    double zeta_y, zeta_z;
};

SpatialFreq spatial_freq(const ArrayConfig &cfg, const Vec3 &u);
SpatialFreq spatial_freq(const ArrayConfig &cfg, const PanelBasis &basis, const Vec3 &u);

/// Uniform grid xi = -pi + 2 pi m / (n * oversample) per axis, xi_y-major.
std::vector<BeamSpec> dft_codebook(const ArrayConfig &cfg, int oversample_y, int oversample_z);

} // namespace nbf
