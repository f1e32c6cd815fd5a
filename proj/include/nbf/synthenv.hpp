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

#include <cstdint>
#include <limits>
#include <span>
#include <vector>

namespace nbf
{

/// Axis-aligned box obstacle standing on the ground (z = 0).
struct Box
{
    Vec3 min_corner{};
    Vec3 size{};
    double reflection_loss_db = 6.0;
    /// Loss of any ray leg crossing the box. Infinite means opaque.
    double penetration_loss_db = std::numeric_limits<double>::infinity();

    Vec3 max_corner() const { return min_corner + size; }
    bool contains(const Vec3 &p) const;
};

struct SiteConfig
{
    double area_side = 256.0;
    double grid_spacing = 4.0;
    Vec3 bs_position{0.0, 128.0, 20.0};
    double ue_height = 1.5;
    std::vector<Box> obstacles;
    int max_paths = 10;
    double f_c = 3.5e9;
    double ground_reflection_loss_db = 6.0;
    bool ground_reflection = true;
    std::uint64_t seed = 1;

    int grid_count() const;
    void validate() const;
};

/// Site MCPPs on the anchor grid. Anchor (ix, iy) sits at the cell centre
/// ((ix + 1/2) d, (iy + 1/2) d, h_UE) and has flat index iy * nx + ix.
struct McppField
{
    int nx = 0;
    int ny = 0;
    double spacing = 1.0;
    double ue_height = 1.5;
    Vec3 bs_position{};
    double f_c = 3.5e9;
    int max_paths = 10;
    std::vector<Mcpp> anchors;

    std::size_t size() const { return anchors.size(); }
    std::size_t index(int ix, int iy) const { return static_cast<std::size_t>(iy) * nx + ix; }
    int ix_of(std::size_t a) const { return static_cast<int>(a % nx); }
    int iy_of(std::size_t a) const { return static_cast<int>(a / nx); }
    Vec3 position(std::size_t a) const;
    double area_side_x() const { return nx * spacing; }
    double area_side_y() const { return ny * spacing; }
    bool operator==(const McppField &) const = default;
};

/// True if the open segment a->b passes through the interior of the box.
bool segment_hits_box(const Vec3 &a, const Vec3 &b, const Box &box);

/// Paths between bs and ue: line of sight, ground bounce and first-order
/// specular reflections off vertical box faces (image method). Unmerged.
std::vector<ScpEntry> trace_paths(const SiteConfig &cfg, const Vec3 &ue);

/// Deterministic site MCPPs, each merged to at most max_paths paths.
McppField generate_site(const SiteConfig &cfg);

/// Reduces a path set to at most `max_paths` by power-weighted K-means in
/// the 7-D condition space (u_tx, u_rx, c tau / 100 m). Total power is
/// conserved; each cluster becomes one path at its power-weighted centroid.
std::vector<ScpEntry> merge_paths(std::span<const ScpEntry> paths, int max_paths);

struct HybridConfig
{
    double beta = 0.5;
    double corr_len = 30.0;
    double power_sigma_db = 4.0;
    double angle_sigma = deg2rad(10.0);
    int random_paths = 3;
    std::uint64_t seed = 7;

    void validate() const;
};

/// Smooth isotropic Gaussian random field (random Fourier features with a
/// Gaussian spectrum); unit marginal variance, correlation length corr_len.
class RandomField
{
  public:
    RandomField(std::uint64_t seed, std::uint64_t stream, double corr_len, int features = 64);
    double operator()(double x, double y) const;

  private:
    std::vector<double> wx_, wy_, phase_;
};

/// Mixes in spatially consistent random paths: deterministic powers are
/// scaled by (1 - beta), random paths carry beta of the anchor's total
/// power, and the union is merged back to max_paths. beta = 0 is identity.
McppField perturb_hybrid(const McppField &field, const HybridConfig &h);

/// One anchor of a dataset: position, per-beam label and MCPP label.
struct AnchorSample
{
    std::size_t anchor = 0;
    double x = 0.0; ///< metres
    double y = 0.0;
    std::vector<double> rsrp_db; ///< one per dataset beam
    Mcpp mcpp;
};

struct Dataset
{
    std::vector<BeamSpec> beams;
    std::vector<AnchorSample> train;
    std::vector<AnchorSample> val;
    double area_x = 256.0;
    double area_y = 256.0;

    std::size_t train_samples() const { return train.size() * beams.size(); }
    std::size_t val_samples() const { return val.size() * beams.size(); }
};

/// Labels every (anchor, beam) with the closed-form mean RSRP in dB and
/// splits by anchor. `label_noise_db` adds Gaussian noise to the dB labels.
Dataset build_dataset(const McppField &field, const ArrayConfig &cfg, std::span<const BeamSpec> beams,
                      double split_ratio, std::uint64_t seed, double label_noise_db = 0.0);

/// Normalised coordinate in [-1, 1].
inline double normalize_coord(double v, double side) { return 2.0 * v / side - 1.0; }

} // namespace nbf
