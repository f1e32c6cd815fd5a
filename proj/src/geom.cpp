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

#include "nbf/geom.hpp"

#include <algorithm>

namespace nbf
{

Mat3 operator*(const Mat3 &a, const Mat3 &b)
{
    Mat3 r{};
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j)
            for (int k = 0; k < 3; ++k)
                r[i][j] += a[i][k] * b[k][j];
    return r;
}

double determinant(const Mat3 &m)
{
    return m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0]) +
           m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
}

Mat3 rotation_matrix(const PanelOrientation &o)
{
    const double cx = std::cos(o.rho_x), sx = std::sin(o.rho_x);
    const double cy = std::cos(o.rho_y), sy = std::sin(o.rho_y);
    const double cz = std::cos(o.rho_z), sz = std::sin(o.rho_z);
    const Mat3 rx{{{1.0, 0.0, 0.0}, {0.0, cx, -sx}, {0.0, sx, cx}}};
    const Mat3 ry{{{cy, 0.0, sy}, {0.0, 1.0, 0.0}, {-sy, 0.0, cy}}};
    const Mat3 rz{{{cz, -sz, 0.0}, {sz, cz, 0.0}, {0.0, 0.0, 1.0}}};
    return rz * (ry * rx);
}

PanelBasis panel_basis(const PanelOrientation &o)
{
    const Mat3 r = rotation_matrix(o);
    return {r * Vec3{1.0, 0.0, 0.0}, r * Vec3{0.0, 1.0, 0.0}, r * Vec3{0.0, 0.0, 1.0}};
}

Vec3 unit_direction(double theta, double phi)
{
    const double st = std::sin(theta);
    return {std::cos(phi) * st, std::sin(phi) * st, std::cos(theta)};
}

double pattern_attenuation_db(double theta_local, double phi_local, const ErpConfig &erp)
{
    const double tv = (theta_local - kPi / 2.0) / erp.theta_3db;
    const double th = phi_local / erp.phi_3db;
    const double a_v = -std::min(12.0 * tv * tv, erp.sla_v);
    const double a_h = -std::min(12.0 * th * th, erp.a_max);
    return -std::min(-(a_v + a_h), erp.a_max);
}

namespace
{

struct LocalAngles
{
    double x, y, z; // projections onto n, h, v
    double theta, phi;
};

LocalAngles local_angles(const Vec3 &u, const PanelBasis &b)
{
    LocalAngles a{dot(b.n, u), dot(b.h, u), dot(b.v, u), 0.0, 0.0};
    a.theta = std::acos(std::clamp(a.z, -1.0, 1.0));
    a.phi = std::atan2(a.y, a.x);
    return a;
}

} // namespace

double element_gain(const Vec3 &u, const PanelBasis &basis, const ErpConfig &erp)
{
    if (erp.kind == ErpConfig::Kind::isotropic)
        return std::pow(10.0, erp.peak_gain_dbi / 10.0);
    const LocalAngles a = local_angles(u, basis);
    return std::pow(10.0, (erp.peak_gain_dbi + pattern_attenuation_db(a.theta, a.phi, erp)) / 10.0);
}

double element_gain(const Vec3 &u, const PanelOrientation &panel, const ErpConfig &erp)
{
    return element_gain(u, panel_basis(panel), erp);
}

GainWithGrad element_gain_grad(const Vec3 &u, const PanelBasis &basis, const ErpConfig &erp)
{
    if (erp.kind == ErpConfig::Kind::isotropic)
        return {std::pow(10.0, erp.peak_gain_dbi / 10.0), {}};

    const LocalAngles a = local_angles(u, basis);
    const double tv = (a.theta - kPi / 2.0) / erp.theta_3db;
    const double th = a.phi / erp.phi_3db;
    const bool v_sat = 12.0 * tv * tv >= erp.sla_v;
    const bool h_sat = 12.0 * th * th >= erp.a_max;
    const double a_v = v_sat ? -erp.sla_v : -12.0 * tv * tv;
    const double a_h = h_sat ? -erp.a_max : -12.0 * th * th;
    const bool floor = -(a_v + a_h) >= erp.a_max;
    const double atten = floor ? -erp.a_max : a_v + a_h;
    const double gain = std::pow(10.0, (erp.peak_gain_dbi + atten) / 10.0);
    if (floor)
        return {gain, {}};

    // dA/dtheta' and dA/dphi'
    const double da_dtheta = v_sat ? 0.0 : -24.0 * tv / erp.theta_3db;
    const double da_dphi = h_sat ? 0.0 : -24.0 * th / erp.phi_3db;

    Vec3 grad_a{};
    if (da_dtheta != 0.0)
    {
        const double s = std::sqrt(std::max(1.0 - a.z * a.z, 1e-300));
        grad_a += basis.v * (-da_dtheta / s);
    }
    const double rho2 = a.x * a.x + a.y * a.y;
    if (da_dphi != 0.0 && rho2 > 0.0)
        grad_a += (basis.h * a.x - basis.n * a.y) * (da_dphi / rho2);

    return {gain, grad_a * (gain * std::numbers::ln10 / 10.0)};
}

} // namespace nbf
