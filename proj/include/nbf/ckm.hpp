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

#include "nbf/synthenv.hpp"

#include <iosfwd>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace nbf
{

/// Regular anchor grid; anchor (ix, iy) sits at the cell centre
/// (origin_x + (ix + 1/2) d, origin_y + (iy + 1/2) d).
struct GridSpec
{
    double origin_x = 0.0;
    double origin_y = 0.0;
    double spacing = 1.0;
    int nx = 0;
    int ny = 0;

    std::size_t size() const { return static_cast<std::size_t>(nx) * ny; }
    std::size_t index(int ix, int iy) const { return static_cast<std::size_t>(iy) * nx + ix; }
    double anchor_x(std::size_t a) const { return origin_x + (static_cast<double>(a % nx) + 0.5) * spacing; }
    double anchor_y(std::size_t a) const { return origin_y + (static_cast<double>(a / nx) + 0.5) * spacing; }
    bool inside(double x, double y) const;
    static GridSpec of(const McppField &field);
    bool operator==(const GridSpec &) const = default;
};

struct Measurement
{
    double x = 0.0;
    double y = 0.0;
    double position_sigma = 0.0; ///< metres
    BeamSpec beam;
    double rsrp_db = 0.0;
    double timestamp = 0.0; ///< seconds
};

/// Thrown when no populated anchor is within the query radius.
class NoCoverage : public std::runtime_error
{
  public:
    using std::runtime_error::runtime_error;
};

/// Per-anchor, per-beam weighted RSRP aggregates with half-life decay.
/// Weights are decayed lazily: a cell's stored weight is valid at its
/// last_update time.
class GridCkm
{
  public:
    struct Cell
    {
        double mean_db = 0.0; ///< weighted mean of ingested rsrp_db
        double weight_total = 0.0;
        double last_update = 0.0;
        bool operator==(const Cell &) const = default;
    };

    GridCkm() = default;
    GridCkm(GridSpec grid, std::vector<BeamSpec> beams, double t_half = 3600.0);

    const GridSpec &grid() const { return grid_; }
    const std::vector<BeamSpec> &beams() const { return beams_; }
    double t_half() const { return t_half_; }

    /// Index of a beam by exact identity; unknown beams are appended.
    std::size_t beam_index(const BeamSpec &beam);
    std::optional<std::size_t> find_beam(const BeamSpec &beam) const;

    /// Spreads one measurement over anchors within max(3d, 2 sigma) with
    /// weights proportional to 1 / (dist^2 + eps^2), eps = max(sigma, 1e-9 d),
    /// normalised to one. Returns the (anchor, weight) pairs applied.
    std::vector<std::pair<std::size_t, double>> ingest(const Measurement &m, double now);

    /// Writes an exact label (used to build baseline maps from ground truth).
    void set_label(std::size_t anchor, std::size_t beam_idx, double rsrp_db, double weight = 1.0, double time = 0.0);

    const Cell &cell(std::size_t anchor, std::size_t beam_idx) const { return cells_[anchor * beams_.size() + beam_idx]; }
    double weight_at(std::size_t anchor, std::size_t beam_idx, double now) const;
    std::optional<double> mean_db(std::size_t anchor, std::size_t beam_idx) const;
    double clock() const { return clock_; }
    std::size_t populated_anchors() const;

    void set_mcpp(std::size_t anchor, Mcpp mcpp);
    const std::optional<Mcpp> &mcpp(std::size_t anchor) const { return mcpps_[anchor]; }

    /// CSV persistence: '#' header lines (grid, beams) then one row per
    /// populated (anchor, beam). MCPPs are not persisted.
    void write(std::ostream &os) const;
    static GridCkm read(std::istream &is);
    std::size_t serialized_bytes() const;

    bool operator==(const GridCkm &) const = default;

  private:
    void advance_clock(double now);

    GridSpec grid_;
    std::vector<BeamSpec> beams_;
    double t_half_ = 3600.0;
    double clock_ = -std::numeric_limits<double>::infinity();
    std::vector<Cell> cells_;
    std::vector<std::optional<Mcpp>> mcpps_;
};

/// Inverse-square-distance interpolation of stored dB values over populated
/// anchors within 3d. A query within 1e-9 d of an anchor returns its value.
double idw_rsrp_query(const GridCkm &ckm, double x, double y, const BeamSpec &beam);

/// Interpolates the anchor MCPPs within 3d (paths matched by power rank,
/// power averaged in dB and scaled by the fraction of anchors that have the
/// path, directions re-normalised, delay averaged).
Mcpp idw_mcpp_interpolate(const GridCkm &ckm, double x, double y);

/// Mean RSRP in dB of the interpolated MCPP.
double idw_mcpp_query(const GridCkm &ckm, double x, double y, const ArrayConfig &cfg, const BeamSpec &beam);

/// Baseline map from a random subset of anchors with exact labels. The
/// subset is drawn from `candidates` (all anchors when empty). RSRP labels
/// come from `field`; MCPPs from `mcpp_source` when given, else `field`.
GridCkm ckm_from_field(const McppField &field, const ArrayConfig &cfg, std::span<const BeamSpec> beams,
                       double fraction, std::uint64_t seed, std::span<const std::size_t> candidates = {},
                       const McppField *mcpp_source = nullptr);

} // namespace nbf
