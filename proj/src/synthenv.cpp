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

#include "nbf/synthenv.hpp"

#include "nbf/rng.hpp"
#include "nbf/whitebox.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>

namespace nbf
{

namespace
{

// Path-length scale that puts delay on par with unit-vector distances in
// the merge metric.
constexpr double kDelayScaleMeters = 100.0;

double &component(Vec3 &v, int axis) { return axis == 0 ? v.x : (axis == 1 ? v.y : v.z); }

} // namespace

bool Box::contains(const Vec3 &p) const
{
    const Vec3 hi = max_corner();
    return p.x > min_corner.x && p.x < hi.x && p.y > min_corner.y && p.y < hi.y && p.z > min_corner.z && p.z < hi.z;
}

int SiteConfig::grid_count() const { return static_cast<int>(std::lround(area_side / grid_spacing)); }

void SiteConfig::validate() const
{
    if (!(area_side > 0.0))
        throw std::invalid_argument("site: area_side must be positive");
    if (!(grid_spacing > 0.0))
        throw std::invalid_argument("site: grid_spacing must be positive");
    if (max_paths < 1)
        throw std::invalid_argument("site: max_paths must be >= 1");
    if (!(f_c > 0.0))
        throw std::invalid_argument("site: f_c must be positive");
    for (std::size_t i = 0; i < obstacles.size(); ++i)
    {
        const Box &b = obstacles[i];
        const Vec3 hi = b.max_corner();
        if (!(b.size.x > 0 && b.size.y > 0 && b.size.z > 0))
            throw std::invalid_argument("site: obstacle " + std::to_string(i) + " has non-positive size");
        if (b.min_corner.x < 0 || b.min_corner.y < 0 || hi.x > area_side || hi.y > area_side)
            throw std::invalid_argument("site: obstacle " + std::to_string(i) + " extends outside the area");
        if (b.contains(bs_position))
            throw std::invalid_argument("site: base station lies inside obstacle " + std::to_string(i));
    }
}

Vec3 McppField::position(std::size_t a) const
{
    return {(ix_of(a) + 0.5) * spacing, (iy_of(a) + 0.5) * spacing, ue_height};
}

bool segment_hits_box(const Vec3 &a, const Vec3 &b, const Box &box)
{
    constexpr double eps = 1e-9;
    double t0 = eps, t1 = 1.0 - eps;
    const Vec3 lo = box.min_corner, hi = box.max_corner();
    for (int axis = 0; axis < 3; ++axis)
    {
        const double o = a[axis], d = b[axis] - a[axis];
        if (std::abs(d) < 1e-15)
        {
            if (o <= lo[axis] || o >= hi[axis])
                return false;
            continue;
        }
        double ta = (lo[axis] - o) / d, tb = (hi[axis] - o) / d;
        if (ta > tb)
            std::swap(ta, tb);
        t0 = std::max(t0, ta);
        t1 = std::min(t1, tb);
        if (t0 >= t1 - 1e-12)
            return false;
    }
    return true;
}

namespace
{

// Summed penetration loss of the boxes a segment crosses; infinite if any
// of them is opaque.
double segment_loss_db(const Vec3 &a, const Vec3 &b, const std::vector<Box> &boxes)
{
    double db = 0.0;
    for (const Box &box : boxes)
        if (segment_hits_box(a, b, box))
            db += box.penetration_loss_db;
    return db;
}

ScpEntry make_path(const Vec3 &bs, const Vec3 &bounce_tx, const Vec3 &bounce_rx, const Vec3 &ue, double length,
                   double loss_db, double wavelength)
{
    ScpEntry s;
    s.u_tx = normalized(bounce_tx - bs);
    s.u_rx = normalized(bounce_rx - ue);
    s.tau = length / kSpeedOfLight;
    const double amp = wavelength / (4.0 * kPi * length);
    s.p = amp * amp * std::pow(10.0, -loss_db / 10.0);
    return s;
}

} // namespace

std::vector<ScpEntry> trace_paths(const SiteConfig &cfg, const Vec3 &ue)
{
    const Vec3 bs = cfg.bs_position;
    const double wavelength = kSpeedOfLight / cfg.f_c;
    std::vector<ScpEntry> paths;

    // Every leg may cross penetrable boxes; their losses add up.
    const double los_db = segment_loss_db(bs, ue, cfg.obstacles);
    if (std::isfinite(los_db))
        paths.push_back(make_path(bs, ue, bs, ue, norm(ue - bs), los_db, wavelength));

    if (cfg.ground_reflection && ue.z > 0.0 && bs.z > 0.0)
    {
        const Vec3 image{bs.x, bs.y, -bs.z};
        const Vec3 q = ue + (image - ue) * (ue.z / (ue.z - image.z));
        const double db = cfg.ground_reflection_loss_db + segment_loss_db(bs, q, cfg.obstacles) +
                          segment_loss_db(q, ue, cfg.obstacles);
        if (std::isfinite(db))
            paths.push_back(make_path(bs, q, q, ue, norm(image - ue), db, wavelength));
    }

    for (const Box &box : cfg.obstacles)
    {
        const Vec3 lo = box.min_corner, hi = box.max_corner();
        for (int axis = 0; axis < 2; ++axis)
            for (int side = 0; side < 2; ++side)
            {
                const double c = side == 0 ? lo[axis] : hi[axis];
                const double outward = side == 0 ? -1.0 : 1.0;
                if (outward * (bs[axis] - c) <= 0.0 || outward * (ue[axis] - c) <= 0.0)
                    continue;
                Vec3 image = bs;
                component(image, axis) = 2.0 * c - bs[axis];
                const Vec3 q = ue + (image - ue) * ((ue[axis] - c) / (ue[axis] - image[axis]));
                const int other = 1 - axis;
                if (q[other] < lo[other] || q[other] > hi[other] || q.z < 0.0 || q.z > hi.z)
                    continue;
                const double db = box.reflection_loss_db + segment_loss_db(bs, q, cfg.obstacles) +
                                  segment_loss_db(q, ue, cfg.obstacles);
                if (std::isfinite(db))
                    paths.push_back(make_path(bs, q, q, ue, norm(image - ue), db, wavelength));
            }
    }
    return paths;
}

McppField generate_site(const SiteConfig &cfg)
{
    cfg.validate();
    McppField field;
    field.nx = field.ny = cfg.grid_count();
    field.spacing = cfg.grid_spacing;
    field.ue_height = cfg.ue_height;
    field.bs_position = cfg.bs_position;
    field.f_c = cfg.f_c;
    field.max_paths = cfg.max_paths;
    field.anchors.resize(static_cast<std::size_t>(field.nx) * field.ny);

    const auto n = static_cast<std::int64_t>(field.anchors.size());
#pragma omp parallel for schedule(dynamic, 32)
    for (std::int64_t a = 0; a < n; ++a)
    {
        const auto paths = trace_paths(cfg, field.position(static_cast<std::size_t>(a)));
        field.anchors[a].paths = merge_paths(paths, cfg.max_paths);
    }
    return field;
}

namespace
{

using Feature = std::array<double, 7>;

Feature features(const ScpEntry &s)
{
    return {s.u_tx.x, s.u_tx.y, s.u_tx.z, s.u_rx.x, s.u_rx.y, s.u_rx.z, s.tau * kSpeedOfLight / kDelayScaleMeters};
}

double dist2(const Feature &a, const Feature &b)
{
    double d = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i)
        d += (a[i] - b[i]) * (a[i] - b[i]);
    return d;
}

Vec3 renormalized_or(const Vec3 &v, const Vec3 &fallback)
{
    const double n = norm(v);
    return n > 1e-12 ? v / n : fallback;
}

} // namespace

std::vector<ScpEntry> merge_paths(std::span<const ScpEntry> paths, int max_paths)
{
    if (max_paths < 1)
        throw std::invalid_argument("merge_paths: max_paths must be >= 1");

    Mcpp in;
    for (const ScpEntry &s : paths)
        if (s.exists)
            in.paths.push_back(s);
    in = canonicalized(in);
    if (in.paths.size() <= static_cast<std::size_t>(max_paths))
        return in.paths;

    const std::size_t n = in.paths.size();
    const auto k = static_cast<std::size_t>(max_paths);
    std::vector<Feature> x(n);
    double total_p = 0.0;
    for (std::size_t i = 0; i < n; ++i)
    {
        x[i] = features(in.paths[i]);
        total_p += in.paths[i].p;
    }
    auto weight = [&](std::size_t i) { return total_p > 0.0 ? in.paths[i].p : 1.0; };

    // seeded with the k strongest paths
    std::vector<Feature> centre(x.begin(), x.begin() + static_cast<std::ptrdiff_t>(k));
    std::vector<std::size_t> label(n, 0);
    for (int iter = 0; iter < 100; ++iter)
    {
        bool changed = iter == 0;
        for (std::size_t i = 0; i < n; ++i)
        {
            std::size_t best = 0;
            double best_d = dist2(x[i], centre[0]);
            for (std::size_t c = 1; c < k; ++c)
            {
                const double d = dist2(x[i], centre[c]);
                if (d < best_d)
                    best_d = d, best = c;
            }
            changed |= label[i] != best;
            label[i] = best;
        }
        if (!changed)
            break;
        for (std::size_t c = 0; c < k; ++c)
        {
            Feature acc{};
            double w = 0.0;
            for (std::size_t i = 0; i < n; ++i)
                if (label[i] == c)
                {
                    for (std::size_t f = 0; f < acc.size(); ++f)
                        acc[f] += weight(i) * x[i][f];
                    w += weight(i);
                }
            if (w > 0.0)
                for (std::size_t f = 0; f < acc.size(); ++f)
                    centre[c][f] = acc[f] / w;
        }
    }

    Mcpp out;
    for (std::size_t c = 0; c < k; ++c)
    {
        ScpEntry merged;
        Vec3 u_tx{}, u_rx{};
        double tau = 0.0, w = 0.0, p = 0.0;
        std::size_t first = n;
        for (std::size_t i = 0; i < n; ++i)
        {
            if (label[i] != c)
                continue;
            if (first == n)
                first = i;
            const ScpEntry &s = in.paths[i];
            u_tx += s.u_tx * weight(i);
            u_rx += s.u_rx * weight(i);
            tau += s.tau * weight(i);
            w += weight(i);
            p += s.p;
        }
        if (first == n)
            continue;
        merged.u_tx = renormalized_or(u_tx, in.paths[first].u_tx);
        merged.u_rx = renormalized_or(u_rx, in.paths[first].u_rx);
        merged.tau = tau / w;
        merged.p = p;
        out.paths.push_back(merged);
    }
    return canonicalized(out).paths;
}

void HybridConfig::validate() const
{
    if (!(beta >= 0.0 && beta < 1.0))
        throw std::invalid_argument("hybrid: beta must lie in [0, 1)");
    if (!(corr_len > 0.0))
        throw std::invalid_argument("hybrid: corr_len must be positive");
    if (random_paths < 1)
        throw std::invalid_argument("hybrid: random_paths must be >= 1");
}

RandomField::RandomField(std::uint64_t seed, std::uint64_t stream, double corr_len, int features)
{
    Rng rng(counter_hash(seed, stream, 0x5eedULL));
    wx_.resize(static_cast<std::size_t>(features));
    wy_.resize(wx_.size());
    phase_.resize(wx_.size());
    for (std::size_t m = 0; m < wx_.size(); ++m)
    {
        wx_[m] = rng.normal() / corr_len;
        wy_[m] = rng.normal() / corr_len;
        phase_[m] = rng.uniform(0.0, 2.0 * kPi);
    }
}

double RandomField::operator()(double x, double y) const
{
    double acc = 0.0;
    for (std::size_t m = 0; m < wx_.size(); ++m)
        acc += std::cos(wx_[m] * x + wy_[m] * y + phase_[m]);
    return acc * std::sqrt(2.0 / static_cast<double>(wx_.size()));
}

McppField perturb_hybrid(const McppField &field, const HybridConfig &h)
{
    h.validate();
    if (h.beta == 0.0)
        return field;

    enum Quantity : std::uint64_t
    {
        kAzimuth,
        kElevation,
        kPower,
        kRange,
        kQuantities
    };
    const auto n_rand = static_cast<std::size_t>(h.random_paths);
    std::vector<RandomField> grf;
    std::vector<double> base_az(n_rand), base_el(n_rand);
    for (std::size_t r = 0; r < n_rand; ++r)
    {
        for (std::uint64_t q = 0; q < kQuantities; ++q)
            grf.emplace_back(h.seed, r * kQuantities + q, h.corr_len);
        base_az[r] = (counter_uniform(h.seed, 0xa2ULL, r) * 2.0 - 1.0) * kPi / 3.0;
        base_el[r] = (counter_uniform(h.seed, 0xe1ULL, r) * 2.0 - 1.0) * 0.1;
    }
    auto field_at = [&](std::size_t r, Quantity q, const Vec3 &x) { return grf[r * kQuantities + q](x.x, x.y); };

    const double wavelength = kSpeedOfLight / field.f_c;
    const double ln10 = std::log(10.0);
    McppField out = field;
    const auto n = static_cast<std::int64_t>(field.size());
#pragma omp parallel for schedule(static)
    for (std::int64_t a = 0; a < n; ++a)
    {
        const Vec3 ue = field.position(static_cast<std::size_t>(a));
        const Vec3 bs = field.bs_position;
        const double dist = norm(ue - bs);
        double p_total = field.anchors[a].total_power();
        if (p_total <= 0.0)
        {
            const double amp = wavelength / (4.0 * kPi * dist);
            p_total = amp * amp;
        }

        const Vec3 los = (ue - bs) / dist;
        const double az0 = std::atan2(los.y, los.x);
        const double el0 = std::asin(std::clamp(los.z, -1.0, 1.0));

        std::vector<ScpEntry> paths;
        for (ScpEntry s : field.anchors[a].paths)
        {
            s.p *= 1.0 - h.beta;
            paths.push_back(s);
        }

        std::vector<double> share(n_rand);
        double share_sum = 0.0;
        for (std::size_t r = 0; r < n_rand; ++r)
        {
            share[r] = std::exp(h.power_sigma_db * ln10 / 10.0 * field_at(r, kPower, ue));
            share_sum += share[r];
        }
        for (std::size_t r = 0; r < n_rand; ++r)
        {
            const double az = az0 + base_az[r] + h.angle_sigma * field_at(r, kAzimuth, ue);
            const double el = el0 + base_el[r] + 0.5 * h.angle_sigma * field_at(r, kElevation, ue);
            ScpEntry s;
            s.u_tx = {std::cos(el) * std::cos(az), std::cos(el) * std::sin(az), std::sin(el)};
            // virtual scatterer along the departure direction
            const double range = dist * std::clamp(0.6 + 0.2 * field_at(r, kRange, ue), 0.2, 1.0);
            Vec3 scatterer = bs + s.u_tx * range;
            scatterer.z = std::max(scatterer.z, 0.5);
            s.u_tx = normalized(scatterer - bs);
            const Vec3 to_scat = scatterer - ue;
            s.u_rx = norm(to_scat) > 1e-9 ? normalized(to_scat) : -los;
            s.tau = (norm(scatterer - bs) + norm(to_scat)) / kSpeedOfLight;
            s.p = h.beta * p_total * share[r] / share_sum;
            paths.push_back(s);
        }
        out.anchors[a].paths = merge_paths(paths, field.max_paths);
    }
    return out;
}

Dataset build_dataset(const McppField &field, const ArrayConfig &cfg, std::span<const BeamSpec> beams,
                      double split_ratio, std::uint64_t seed, double label_noise_db)
{
    if (!(split_ratio > 0.0 && split_ratio < 1.0))
        throw std::invalid_argument("build_dataset: split_ratio must lie in (0, 1)");

    const std::vector<double> mean = rsrp_mean_table(field.anchors, cfg, beams);
    std::vector<std::size_t> order(field.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng(seed);
    rng.shuffle(order);
    const auto n_train = static_cast<std::size_t>(std::llround(split_ratio * static_cast<double>(field.size())));
    std::vector<std::size_t> train(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_train));
    std::vector<std::size_t> val(order.begin() + static_cast<std::ptrdiff_t>(n_train), order.end());
    std::sort(train.begin(), train.end());
    std::sort(val.begin(), val.end());

    Dataset ds;
    ds.beams.assign(beams.begin(), beams.end());
    ds.area_x = field.area_side_x();
    ds.area_y = field.area_side_y();
    auto make = [&](std::size_t a) {
        AnchorSample s;
        s.anchor = a;
        const Vec3 p = field.position(a);
        s.x = p.x;
        s.y = p.y;
        s.mcpp = field.anchors[a];
        s.rsrp_db.resize(beams.size());
        for (std::size_t b = 0; b < beams.size(); ++b)
        {
            double db = to_db(mean[a * beams.size() + b]);
            if (label_noise_db > 0.0)
            {
                const double u1 = std::max(counter_uniform(seed, 0x401eULL, a, 2 * b), 1e-300);
                const double u2 = counter_uniform(seed, 0x401eULL, a, 2 * b + 1);
                db += label_noise_db * std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * kPi * u2);
            }
            s.rsrp_db[b] = db;
        }
        return s;
    };
    for (std::size_t a : train)
        ds.train.push_back(make(a));
    for (std::size_t a : val)
        ds.val.push_back(make(a));
    return ds;
}

} // namespace nbf
