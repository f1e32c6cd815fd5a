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

#include "nbf/array.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace nbf
{

void ArrayConfig::validate() const
{
    if (n_y < 1 || n_z < 1)
        throw std::invalid_argument("array: element counts must be positive, got " + std::to_string(n_y) + "x" +
                                    std::to_string(n_z));
    if (!(d_y > 0.0) || !(d_z > 0.0))
        throw std::invalid_argument("array: element spacing must be positive");
    if (!(f_c > 0.0))
        throw std::invalid_argument("array: carrier frequency must be positive");
}

ArrayConfig ArrayConfig::half_wavelength(int n_y, int n_z, double f_c, PanelOrientation o, ErpConfig erp)
{
    ArrayConfig c;
    c.n_y = n_y;
    c.n_z = n_z;
    c.f_c = f_c;
    c.d_y = c.d_z = 0.5 * kSpeedOfLight / f_c;
    c.orientation = o;
    c.erp = erp;
    return c;
}

CVec arv_axis(int n, double spacing, const Vec3 &axis_basis, const Vec3 &u, double f_c)
{
    const double step = 2.0 * kPi * f_c / kSpeedOfLight * spacing * dot(axis_basis, u);
    CVec out(static_cast<std::size_t>(n));
    for (int k = 0; k < n; ++k)
        out[k] = std::polar(1.0, step * k);
    return out;
}

CVec kron(const CVec &a, const CVec &b)
{
    CVec out;
    out.reserve(a.size() * b.size());
    for (const cplx &x : a)
        for (const cplx &y : b)
            out.push_back(x * y);
    return out;
}

CVec arv(const ArrayConfig &cfg, const PanelBasis &basis, const Vec3 &u)
{
    return kron(arv_axis(cfg.n_y, cfg.d_y, basis.h, u, cfg.f_c), arv_axis(cfg.n_z, cfg.d_z, basis.v, u, cfg.f_c));
}

CVec arv(const ArrayConfig &cfg, const Vec3 &u) { return arv(cfg, cfg.basis(), u); }

CVec dft_weight(const BeamSpec &beam, const ArrayConfig &cfg)
{
    CVec wy(static_cast<std::size_t>(cfg.n_y)), wz(static_cast<std::size_t>(cfg.n_z));
    for (int k = 0; k < cfg.n_y; ++k)
        wy[k] = std::polar(1.0, beam.xi_y * k);
    for (int k = 0; k < cfg.n_z; ++k)
        wz[k] = std::polar(1.0, beam.xi_z * k);
    CVec w = kron(wy, wz);
    const double s = 1.0 / std::sqrt(static_cast<double>(cfg.n_tx()));
    for (cplx &x : w)
        x *= s;
    return w;
}

cplx bilinear(const CVec &a, const CVec &w)
{
    if (a.size() != w.size())
        throw std::invalid_argument("bilinear: length mismatch");
    cplx acc{};
    for (std::size_t i = 0; i < a.size(); ++i)
        acc += a[i] * w[i];
    return acc;
}

SpatialFreq spatial_freq(const ArrayConfig &cfg, const PanelBasis &basis, const Vec3 &u)
{
    const double k = 2.0 * kPi * cfg.f_c / kSpeedOfLight;
    return {k * cfg.d_y * dot(basis.h, u), k * cfg.d_z * dot(basis.v, u)};
}

SpatialFreq spatial_freq(const ArrayConfig &cfg, const Vec3 &u) { return spatial_freq(cfg, cfg.basis(), u); }

std::vector<BeamSpec> dft_codebook(const ArrayConfig &cfg, int oversample_y, int oversample_z)
{
    if (oversample_y < 1 || oversample_z < 1)
        throw std::invalid_argument("dft_codebook: oversampling must be >= 1");
    const int my = cfg.n_y * oversample_y;
    const int mz = cfg.n_z * oversample_z;
    std::vector<BeamSpec> beams;
    beams.reserve(static_cast<std::size_t>(my) * mz);
    // A single-codeword axis has no phase progression to choose; it is pinned to 0.
    auto grid = [](int m, int count) { return count == 1 ? 0.0 : -kPi + 2.0 * kPi * m / count; };
    for (int iy = 0; iy < my; ++iy)
        for (int iz = 0; iz < mz; ++iz)
            beams.push_back({grid(iy, my), grid(iz, mz)});
    return beams;
}

} // namespace nbf
