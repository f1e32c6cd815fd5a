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

#include <array>
#include <cmath>
#include <numbers>

namespace nbf
{

inline constexpr double kPi = std::numbers::pi;
inline constexpr double kSpeedOfLight = 299792458.0;

inline constexpr double deg2rad(double deg) { return deg * kPi / 180.0; }
inline constexpr double rad2deg(double rad) { return rad * 180.0 / kPi; }

struct Vec3
{
    double x = 0.0, y = 0.0, z = 0.0;

    constexpr Vec3 operator+(const Vec3 &o) const { return {x + o.x, y + o.y, z + o.z}; }
    constexpr Vec3 operator-(const Vec3 &o) const { return {x - o.x, y - o.y, z - o.z}; }
    constexpr Vec3 operator-() const { return {-x, -y, -z}; }
    constexpr Vec3 operator*(double s) const { return {x * s, y * s, z * s}; }
    constexpr Vec3 operator/(double s) const { return {x / s, y / s, z / s}; }
    constexpr Vec3 &operator+=(const Vec3 &o)
    {
        x += o.x;
        y += o.y;
        z += o.z;
        return *this;
    }
    constexpr bool operator==(const Vec3 &) const = default;
    constexpr double operator[](int i) const { return i == 0 ? x : (i == 1 ? y : z); }
};

inline constexpr Vec3 operator*(double s, const Vec3 &v) { return v * s; }
inline constexpr double dot(const Vec3 &a, const Vec3 &b) { return a.x * b.x + a.y * b.y + a.z * b.z; }
inline constexpr Vec3 cross(const Vec3 &a, const Vec3 &b)
{
    return {a.y * b.z - a.z * b.y, a.z * b.x - a.x * b.z, a.x * b.y - a.y * b.x};
}
inline double norm(const Vec3 &a) { return std::sqrt(dot(a, a)); }
inline Vec3 normalized(const Vec3 &a) { return a / norm(a); }

using Mat3 = std::array<std::array<double, 3>, 3>;

inline constexpr Vec3 operator*(const Mat3 &m, const Vec3 &v)
{
    return {m[0][0] * v.x + m[0][1] * v.y + m[0][2] * v.z, m[1][0] * v.x + m[1][1] * v.y + m[1][2] * v.z,
            m[2][0] * v.x + m[2][1] * v.y + m[2][2] * v.z};
}
Mat3 operator*(const Mat3 &a, const Mat3 &b);
double determinant(const Mat3 &m);

/// Counterclockwise panel rotations about the global x, y and z axes, in radians.
struct PanelOrientation
{
    double rho_x = 0.0, rho_y = 0.0, rho_z = 0.0;
};

/// Element radiation pattern. `directional_38901` is the single-element
/// pattern of 3GPP TR 38.901 Table 7.3-1.
struct ErpConfig
{
    enum class Kind
    {
        isotropic,
        directional_38901
    };
    Kind kind = Kind::directional_38901;
    double peak_gain_dbi = 8.0;
    double theta_3db = deg2rad(65.0);
    double phi_3db = deg2rad(65.0);
    double sla_v = 30.0;
    double a_max = 30.0;

    static ErpConfig isotropic()
    {
        ErpConfig e;
        e.kind = Kind::isotropic;
        e.peak_gain_dbi = 0.0;
        return e;
    }
};

/// Panel local frame: boresight n, horizontal h, vertical v.
struct PanelBasis
{
    Vec3 n, h, v;
};

/// R = R_z(rho_z) R_y(rho_y) R_x(rho_x).
Mat3 rotation_matrix(const PanelOrientation &o);

/// Rotated images of n0 = +x, h0 = +y, v0 = +z.
PanelBasis panel_basis(const PanelOrientation &o);

/// [cos(phi) sin(theta), sin(phi) sin(theta), cos(theta)].
Vec3 unit_direction(double theta, double phi);

/// Linear element power gain towards direction u. The local angles are
/// taken from the raw projections of u onto the panel basis, so the
/// function is defined (and differentiable) off the unit sphere too.
double element_gain(const Vec3 &u, const PanelBasis &basis, const ErpConfig &erp);
double element_gain(const Vec3 &u, const PanelOrientation &panel, const ErpConfig &erp);

/// Gain together with its gradient with respect to the components of u.
struct GainWithGrad
{
    double gain;
    Vec3 grad;
};
GainWithGrad element_gain_grad(const Vec3 &u, const PanelBasis &basis, const ErpConfig &erp);

/// Attenuation A(theta', phi') in dB (<= 0) for local zenith/azimuth angles.
double pattern_attenuation_db(double theta_local, double phi_local, const ErpConfig &erp);

} // namespace nbf
