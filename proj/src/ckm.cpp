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

#include "nbf/ckm.hpp"

#include "nbf/rng.hpp"
#include "nbf/whitebox.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <istream>
#include <numeric>
#include <ostream>
#include <sstream>

namespace nbf
{

namespace
{

constexpr double kQueryRadiusCells = 3.0;
constexpr double kSnapCells = 1e-9;

// Anchors whose centre lies within `radius` of (x, y), with distances.
std::vector<std::pair<std::size_t, double>> anchors_within(const GridSpec &g, double x, double y, double radius)
{
    std::vector<std::pair<std::size_t, double>> out;
    const double d = g.spacing;
    const int ix0 = std::max(0, static_cast<int>(std::floor((x - g.origin_x - radius) / d - 0.5)));
    const int ix1 = std::min(g.nx - 1, static_cast<int>(std::ceil((x - g.origin_x + radius) / d - 0.5)));
    const int iy0 = std::max(0, static_cast<int>(std::floor((y - g.origin_y - radius) / d - 0.5)));
    const int iy1 = std::min(g.ny - 1, static_cast<int>(std::ceil((y - g.origin_y + radius) / d - 0.5)));
    const double lim = radius * (1.0 + 1e-12);
    for (int iy = iy0; iy <= iy1; ++iy)
        for (int ix = ix0; ix <= ix1; ++ix)
        {
            const std::size_t a = g.index(ix, iy);
            const double dist = std::hypot(g.anchor_x(a) - x, g.anchor_y(a) - y);
            if (dist <= lim)
                out.emplace_back(a, dist);
        }
    return out;
}

double decay_factor(double dt, double t_half) { return std::exp2(-dt / t_half); }

std::string fmt_double(double v)
{
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

std::vector<std::string> split_csv(const std::string &line)
{
    std::vector<std::string> out;
    std::stringstream ss(line);
    std::string tok;
    while (std::getline(ss, tok, ','))
        out.push_back(tok);
    return out;
}

double parse_double(const std::string &s)
{
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size())
        throw std::invalid_argument("ckm: malformed number '" + s + "'");
    return v;
}

} // namespace

bool GridSpec::inside(double x, double y) const
{
    return x >= origin_x && x <= origin_x + nx * spacing && y >= origin_y && y <= origin_y + ny * spacing;
}

GridSpec GridSpec::of(const McppField &field)
{
    return {0.0, 0.0, field.spacing, field.nx, field.ny};
}

GridCkm::GridCkm(GridSpec grid, std::vector<BeamSpec> beams, double t_half)
    : grid_(grid), beams_(std::move(beams)), t_half_(t_half)
{
    if (grid_.nx < 1 || grid_.ny < 1 || !(grid_.spacing > 0.0))
        throw std::invalid_argument("ckm: grid needs nx, ny >= 1 and spacing > 0");
    if (!(t_half_ > 0.0))
        throw std::invalid_argument("ckm: t_half must be positive");
    cells_.resize(grid_.size() * beams_.size());
    mcpps_.resize(grid_.size());
}

std::optional<std::size_t> GridCkm::find_beam(const BeamSpec &beam) const
{
    const auto it = std::find(beams_.begin(), beams_.end(), beam);
    if (it == beams_.end())
        return std::nullopt;
    return static_cast<std::size_t>(it - beams_.begin());
}

std::size_t GridCkm::beam_index(const BeamSpec &beam)
{
    if (auto idx = find_beam(beam))
        return *idx;
    // re-stride the cell table for one more beam
    const std::size_t old_k = beams_.size();
    std::vector<Cell> grown(grid_.size() * (old_k + 1));
    for (std::size_t a = 0; a < grid_.size(); ++a)
        std::copy_n(cells_.begin() + static_cast<std::ptrdiff_t>(a * old_k), old_k,
                    grown.begin() + static_cast<std::ptrdiff_t>(a * (old_k + 1)));
    cells_ = std::move(grown);
    beams_.push_back(beam);
    return old_k;
}

void GridCkm::advance_clock(double now)
{
    if (now < clock_)
        throw std::invalid_argument("ckm: timestamps must be non-decreasing");
    clock_ = now;
}

std::vector<std::pair<std::size_t, double>> GridCkm::ingest(const Measurement &m, double now)
{
    if (!grid_.inside(m.x, m.y))
        throw std::invalid_argument("ckm: measurement position outside the map");
    if (!(m.position_sigma >= 0.0))
        throw std::invalid_argument("ckm: position_sigma must be >= 0");
    advance_clock(now);

    const double d = grid_.spacing;
    const double radius = std::max(kQueryRadiusCells * d, 2.0 * m.position_sigma);
    auto near = anchors_within(grid_, m.x, m.y, radius);

    std::vector<std::pair<std::size_t, double>> weights;
    const auto closest = std::min_element(near.begin(), near.end(),
                                          [](const auto &a, const auto &b) { return a.second < b.second; });
    if (m.position_sigma == 0.0 && closest != near.end() && closest->second < kSnapCells * d)
    {
        weights.emplace_back(closest->first, 1.0);
    }
    else
    {
        const double eps = std::max(m.position_sigma, kSnapCells * d);
        double total = 0.0;
        for (const auto &[a, dist] : near)
        {
            const double w = 1.0 / (dist * dist + eps * eps);
            weights.emplace_back(a, w);
            total += w;
        }
        for (auto &aw : weights)
            aw.second /= total;
    }

    const std::size_t b = beam_index(m.beam);
    for (const auto &[a, w] : weights)
    {
        Cell &c = cells_[a * beams_.size() + b];
        if (c.weight_total > 0.0)
            c.weight_total *= decay_factor(now - c.last_update, t_half_);
        const double total = c.weight_total + w;
        c.mean_db = (c.mean_db * c.weight_total + m.rsrp_db * w) / total;
        c.weight_total = total;
        c.last_update = now;
    }
    return weights;
}

void GridCkm::set_label(std::size_t anchor, std::size_t beam_idx, double rsrp_db, double weight, double time)
{
    if (anchor >= grid_.size() || beam_idx >= beams_.size())
        throw std::out_of_range("ckm: anchor or beam index out of range");
    if (!(weight > 0.0))
        throw std::invalid_argument("ckm: label weight must be positive");
    cells_[anchor * beams_.size() + beam_idx] = {rsrp_db, weight, time};
}

double GridCkm::weight_at(std::size_t anchor, std::size_t beam_idx, double now) const
{
    const Cell &c = cell(anchor, beam_idx);
    if (c.weight_total == 0.0)
        return 0.0;
    return c.weight_total * decay_factor(now - c.last_update, t_half_);
}

std::optional<double> GridCkm::mean_db(std::size_t anchor, std::size_t beam_idx) const
{
    const Cell &c = cell(anchor, beam_idx);
    if (c.weight_total > 0.0)
        return c.mean_db;
    return std::nullopt;
}

std::size_t GridCkm::populated_anchors() const
{
    std::size_t n = 0;
    const std::size_t k = beams_.size();
    for (std::size_t a = 0; a < grid_.size(); ++a)
        for (std::size_t b = 0; b < k; ++b)
            if (cells_[a * k + b].weight_total > 0.0)
            {
                ++n;
                break;
            }
    return n;
}

void GridCkm::set_mcpp(std::size_t anchor, Mcpp mcpp)
{
    if (anchor >= grid_.size())
        throw std::out_of_range("ckm: anchor index out of range");
    mcpps_[anchor] = canonicalized(mcpp);
}

void GridCkm::write(std::ostream &os) const
{
    os << "#grid," << fmt_double(grid_.origin_x) << ',' << fmt_double(grid_.origin_y) << ','
       << fmt_double(grid_.spacing) << ',' << grid_.nx << ',' << grid_.ny << ',' << fmt_double(t_half_) << ','
       << fmt_double(clock_) << '\n';
    for (std::size_t b = 0; b < beams_.size(); ++b)
        os << "#beam," << b << ',' << fmt_double(beams_[b].xi_y) << ',' << fmt_double(beams_[b].xi_z) << '\n';
    os << "ix,iy,beam_idx,mean_db,weight_total,last_update_s\n";
    const std::size_t k = beams_.size();
    for (std::size_t a = 0; a < grid_.size(); ++a)
        for (std::size_t b = 0; b < k; ++b)
        {
            const Cell &c = cells_[a * k + b];
            if (c.weight_total <= 0.0)
                continue;
            os << a % grid_.nx << ',' << a / grid_.nx << ',' << b << ',' << fmt_double(c.mean_db) << ','
               << fmt_double(c.weight_total) << ',' << fmt_double(c.last_update) << '\n';
        }
}

std::size_t GridCkm::serialized_bytes() const
{
    std::ostringstream os;
    write(os);
    return os.str().size();
}

GridCkm GridCkm::read(std::istream &is)
{
    std::string line;
    GridSpec grid;
    double t_half = 0.0, clock = 0.0;
    std::vector<BeamSpec> beams;
    bool have_grid = false;
    std::vector<std::vector<std::string>> rows;
    bool header_seen = false;
    while (std::getline(is, line))
    {
        if (line.empty())
            continue;
        const auto tok = split_csv(line);
        if (tok[0] == "#grid")
        {
            if (tok.size() != 8)
                throw std::invalid_argument("ckm: malformed grid line");
            grid = {parse_double(tok[1]), parse_double(tok[2]), parse_double(tok[3]), std::stoi(tok[4]),
                    std::stoi(tok[5])};
            t_half = parse_double(tok[6]);
            clock = parse_double(tok[7]);
            have_grid = true;
        }
        else if (tok[0] == "#beam")
        {
            if (tok.size() != 4 || std::stoul(tok[1]) != beams.size())
                throw std::invalid_argument("ckm: malformed beam line");
            beams.push_back({parse_double(tok[2]), parse_double(tok[3])});
        }
        else if (tok[0] == "ix")
            header_seen = true;
        else
        {
            if (!header_seen || tok.size() != 6)
                throw std::invalid_argument("ckm: malformed row '" + line + "'");
            rows.push_back(tok);
        }
    }
    if (!have_grid)
        throw std::invalid_argument("ckm: missing grid line");
    GridCkm ckm(grid, beams, t_half);
    ckm.clock_ = clock;
    for (const auto &r : rows)
    {
        const int ix = std::stoi(r[0]), iy = std::stoi(r[1]);
        const std::size_t b = std::stoul(r[2]);
        if (ix < 0 || ix >= grid.nx || iy < 0 || iy >= grid.ny || b >= beams.size())
            throw std::invalid_argument("ckm: row index out of range");
        ckm.cells_[grid.index(ix, iy) * beams.size() + b] = {parse_double(r[3]), parse_double(r[4]),
                                                             parse_double(r[5])};
    }
    return ckm;
}

double idw_rsrp_query(const GridCkm &ckm, double x, double y, const BeamSpec &beam)
{
    const auto b = ckm.find_beam(beam);
    if (!b)
        throw NoCoverage("idw: beam not present in the map");
    const GridSpec &g = ckm.grid();
    double num = 0.0, den = 0.0;
    for (const auto &[a, dist] : anchors_within(g, x, y, kQueryRadiusCells * g.spacing))
    {
        const auto v = ckm.mean_db(a, *b);
        if (!v)
            continue;
        if (dist < kSnapCells * g.spacing)
            return *v;
        const double w = 1.0 / (dist * dist);
        num += w * *v;
        den += w;
    }
    if (den == 0.0)
        throw NoCoverage("idw: no populated anchor within 3d");
    return num / den;
}

Mcpp idw_mcpp_interpolate(const GridCkm &ckm, double x, double y)
{
    const GridSpec &g = ckm.grid();
    std::vector<std::pair<const Mcpp *, double>> near;
    for (const auto &[a, dist] : anchors_within(g, x, y, kQueryRadiusCells * g.spacing))
    {
        const auto &m = ckm.mcpp(a);
        if (!m)
            continue;
        if (dist < kSnapCells * g.spacing)
            return *m;
        near.emplace_back(&*m, 1.0 / (dist * dist));
    }
    if (near.empty())
        throw NoCoverage("idw: no anchor with an MCPP within 3d");

    double w_all = 0.0;
    std::size_t max_paths = 0;
    for (const auto &[m, w] : near)
    {
        w_all += w;
        max_paths = std::max(max_paths, m->paths.size());
    }

    // stored MCPPs are canonical, so index i is the i-th strongest path
    Mcpp out;
    for (std::size_t i = 0; i < max_paths; ++i)
    {
        double w_i = 0.0, p_db = 0.0, tau = 0.0;
        Vec3 u_tx{}, u_rx{};
        for (const auto &[m, w] : near)
        {
            if (i >= m->paths.size())
                continue;
            const ScpEntry &s = m->paths[i];
            w_i += w;
            p_db += w * 10.0 * std::log10(std::max(s.p, kPowerFloor));
            tau += w * s.tau;
            u_tx += s.u_tx * w;
            u_rx += s.u_rx * w;
        }
        ScpEntry s;
        s.p = (w_i / w_all) * std::pow(10.0, p_db / w_i / 10.0);
        s.tau = tau / w_i;
        if (norm(u_tx) > 1e-12)
            s.u_tx = normalized(u_tx);
        if (norm(u_rx) > 1e-12)
            s.u_rx = normalized(u_rx);
        out.paths.push_back(s);
    }
    return out;
}

double idw_mcpp_query(const GridCkm &ckm, double x, double y, const ArrayConfig &cfg, const BeamSpec &beam)
{
    return to_db(rsrp_mean(idw_mcpp_interpolate(ckm, x, y), cfg, beam));
}

GridCkm ckm_from_field(const McppField &field, const ArrayConfig &cfg, std::span<const BeamSpec> beams,
                       double fraction, std::uint64_t seed, std::span<const std::size_t> candidates,
                       const McppField *mcpp_source)
{
    if (!(fraction > 0.0 && fraction <= 1.0))
        throw std::invalid_argument("ckm_from_field: fraction must lie in (0, 1]");
    if (mcpp_source && mcpp_source->size() != field.size())
        throw std::invalid_argument("ckm_from_field: MCPP source grid does not match");

    std::vector<std::size_t> pool(candidates.begin(), candidates.end());
    if (pool.empty())
    {
        pool.resize(field.size());
        std::iota(pool.begin(), pool.end(), std::size_t{0});
    }
    const auto count = std::max<std::size_t>(
        1, static_cast<std::size_t>(std::llround(fraction * static_cast<double>(pool.size()))));
    Rng rng(seed);
    rng.shuffle(pool);
    pool.resize(count);
    std::sort(pool.begin(), pool.end());

    std::vector<Mcpp> chosen;
    chosen.reserve(count);
    for (std::size_t a : pool)
        chosen.push_back(field.anchors.at(a));
    const std::vector<double> mean = rsrp_mean_table(chosen, cfg, beams);

    GridCkm ckm(GridSpec::of(field), {beams.begin(), beams.end()});
    for (std::size_t i = 0; i < count; ++i)
    {
        for (std::size_t b = 0; b < beams.size(); ++b)
            ckm.set_label(pool[i], b, to_db(mean[i * beams.size() + b]));
        ckm.set_mcpp(pool[i], (mcpp_source ? *mcpp_source : field).anchors[pool[i]]);
    }
    return ckm;
}

} // namespace nbf
