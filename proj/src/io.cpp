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

#include "nbf/io.hpp"

#include <cstdio>
#include <fstream>
#include <istream>
#include <ostream>
#include <set>
#include <sstream>
#include <stdexcept>

namespace nbf
{

using nlohmann::json;

namespace
{

template <typename T>
void opt(const json &j, const char *key, T &out)
{
    if (j.contains(key))
        j.at(key).get_to(out);
}

void check_keys(const json &j, const std::set<std::string> &allowed, const char *what)
{
    if (!j.is_object())
        throw std::invalid_argument(std::string(what) + ": expected an object");
    for (const auto &item : j.items())
        if (!allowed.count(item.key()))
            throw std::invalid_argument(std::string(what) + ": unknown key \"" + item.key() + "\"");
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

double to_double(const std::string &s)
{
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size())
        throw std::invalid_argument("csv: malformed number '" + s + "'");
    return v;
}

} // namespace

void read_angle(const json &j, const std::string &key, double &out)
{
    if (j.contains(key))
        j.at(key).get_to(out);
    else if (j.contains(key + "_deg"))
        out = deg2rad(j.at(key + "_deg").get<double>());
}

std::string format_double(double v)
{
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

void to_json(json &j, const Vec3 &v) { j = json::array({v.x, v.y, v.z}); }

void from_json(const json &j, Vec3 &v)
{
    if (!j.is_array() || j.size() != 3)
        throw std::invalid_argument("expected a 3-vector");
    v = {j[0].get<double>(), j[1].get<double>(), j[2].get<double>()};
}

void to_json(json &j, const PanelOrientation &o) { j = {{"rho_x", o.rho_x}, {"rho_y", o.rho_y}, {"rho_z", o.rho_z}}; }

void from_json(const json &j, PanelOrientation &o)
{
    check_keys(j, {"rho_x", "rho_y", "rho_z", "rho_x_deg", "rho_y_deg", "rho_z_deg"}, "orientation");
    read_angle(j, "rho_x", o.rho_x);
    read_angle(j, "rho_y", o.rho_y);
    read_angle(j, "rho_z", o.rho_z);
}

void to_json(json &j, const ErpConfig &e)
{
    j = {{"kind", e.kind == ErpConfig::Kind::isotropic ? "isotropic" : "38.901"},
         {"peak_gain_dbi", e.peak_gain_dbi},
         {"theta_3db", e.theta_3db},
         {"phi_3db", e.phi_3db},
         {"sla_v", e.sla_v},
         {"a_max", e.a_max}};
}

void from_json(const json &j, ErpConfig &e)
{
    check_keys(j, {"kind", "peak_gain_dbi", "theta_3db", "phi_3db", "theta_3db_deg", "phi_3db_deg", "sla_v", "a_max"},
               "erp");
    if (j.contains("kind"))
    {
        const auto kind = j.at("kind").get<std::string>();
        if (kind == "isotropic")
            e = ErpConfig::isotropic();
        else if (kind == "38.901")
            e.kind = ErpConfig::Kind::directional_38901;
        else
            throw std::invalid_argument("erp: kind must be \"isotropic\" or \"38.901\"");
    }
    opt(j, "peak_gain_dbi", e.peak_gain_dbi);
    read_angle(j, "theta_3db", e.theta_3db);
    read_angle(j, "phi_3db", e.phi_3db);
    opt(j, "sla_v", e.sla_v);
    opt(j, "a_max", e.a_max);
}

void to_json(json &j, const ArrayConfig &a)
{
    j = {{"n_y", a.n_y}, {"n_z", a.n_z}, {"f_c", a.f_c},           {"d_y", a.d_y},
         {"d_z", a.d_z}, {"erp", a.erp}, {"orientation", a.orientation}};
}

void from_json(const json &j, ArrayConfig &a)
{
    check_keys(j, {"n_y", "n_z", "f_c", "d_y", "d_z", "erp", "orientation"}, "array");
    opt(j, "n_y", a.n_y);
    opt(j, "n_z", a.n_z);
    if (j.contains("f_c"))
    {
        // spacing follows the carrier unless given explicitly
        j.at("f_c").get_to(a.f_c);
        a.d_y = a.d_z = 0.5 * a.wavelength();
    }
    opt(j, "d_y", a.d_y);
    opt(j, "d_z", a.d_z);
    opt(j, "erp", a.erp);
    opt(j, "orientation", a.orientation);
}

void to_json(json &j, const BeamSpec &b) { j = json::array({b.xi_y, b.xi_z}); }

void from_json(const json &j, BeamSpec &b)
{
    if (!j.is_array() || j.size() != 2)
        throw std::invalid_argument("beam: expected [xi_y, xi_z]");
    b = {j[0].get<double>(), j[1].get<double>()};
}

void to_json(json &j, const Box &b)
{
    j = {{"min", b.min_corner}, {"size", b.size}, {"reflection_loss_db", b.reflection_loss_db}};
    if (std::isfinite(b.penetration_loss_db))
        j["penetration_loss_db"] = b.penetration_loss_db;
}

void from_json(const json &j, Box &b)
{
    check_keys(j, {"min", "size", "reflection_loss_db", "penetration_loss_db"}, "obstacle");
    j.at("min").get_to(b.min_corner);
    j.at("size").get_to(b.size);
    opt(j, "reflection_loss_db", b.reflection_loss_db);
    opt(j, "penetration_loss_db", b.penetration_loss_db);
}

void to_json(json &j, const SiteConfig &s)
{
    j = {{"area_side", s.area_side},
         {"grid_spacing", s.grid_spacing},
         {"bs_position", s.bs_position},
         {"ue_height", s.ue_height},
         {"obstacles", s.obstacles},
         {"max_paths", s.max_paths},
         {"f_c", s.f_c},
         {"ground_reflection", s.ground_reflection},
         {"ground_reflection_loss_db", s.ground_reflection_loss_db},
         {"seed", s.seed}};
}

void from_json(const json &j, SiteConfig &s)
{
    check_keys(j,
               {"area_side", "grid_spacing", "bs_position", "ue_height", "obstacles", "max_paths", "f_c",
                "ground_reflection", "ground_reflection_loss_db", "seed"},
               "site");
    opt(j, "area_side", s.area_side);
    opt(j, "grid_spacing", s.grid_spacing);
    opt(j, "bs_position", s.bs_position);
    opt(j, "ue_height", s.ue_height);
    opt(j, "obstacles", s.obstacles);
    opt(j, "max_paths", s.max_paths);
    opt(j, "f_c", s.f_c);
    opt(j, "ground_reflection", s.ground_reflection);
    opt(j, "ground_reflection_loss_db", s.ground_reflection_loss_db);
    opt(j, "seed", s.seed);
}

void to_json(json &j, const HybridConfig &h)
{
    j = {{"beta", h.beta},
         {"corr_len", h.corr_len},
         {"power_sigma_db", h.power_sigma_db},
         {"angle_sigma", h.angle_sigma},
         {"random_paths", h.random_paths},
         {"seed", h.seed}};
}

void from_json(const json &j, HybridConfig &h)
{
    check_keys(j, {"beta", "corr_len", "power_sigma_db", "angle_sigma", "angle_sigma_deg", "random_paths", "seed"},
               "hybrid");
    opt(j, "beta", h.beta);
    opt(j, "corr_len", h.corr_len);
    opt(j, "power_sigma_db", h.power_sigma_db);
    read_angle(j, "angle_sigma", h.angle_sigma);
    opt(j, "random_paths", h.random_paths);
    opt(j, "seed", h.seed);
}

void write_field_csv(std::ostream &os, const McppField &f)
{
    os << "#field," << f.nx << ',' << f.ny << ',' << format_double(f.spacing) << ',' << format_double(f.ue_height)
       << ',' << format_double(f.bs_position.x) << ',' << format_double(f.bs_position.y) << ','
       << format_double(f.bs_position.z) << ',' << format_double(f.f_c) << ',' << f.max_paths << '\n';
    os << "anchor_ix,anchor_iy,u_tx_x,u_tx_y,u_tx_z,u_rx_x,u_rx_y,u_rx_z,tau_s,p_linear\n";
    for (std::size_t a = 0; a < f.size(); ++a)
    {
        const Mcpp m = canonicalized(f.anchors[a]);
        for (const ScpEntry &s : m.paths)
        {
            os << f.ix_of(a) << ',' << f.iy_of(a);
            for (const Vec3 *v : {&s.u_tx, &s.u_rx})
                os << ',' << format_double(v->x) << ',' << format_double(v->y) << ',' << format_double(v->z);
            os << ',' << format_double(s.tau) << ',' << format_double(s.p) << '\n';
        }
    }
}

McppField read_field_csv(std::istream &is)
{
    McppField f;
    std::string line;
    bool have_grid = false;
    std::size_t line_no = 0;
    while (std::getline(is, line))
    {
        ++line_no;
        if (line.empty() || line.rfind("anchor_ix", 0) == 0)
            continue;
        const auto tok = split_csv(line);
        try
        {
            if (tok[0] == "#field")
            {
                if (tok.size() != 10)
                    throw std::invalid_argument("field line needs 9 values");
                f.nx = std::stoi(tok[1]);
                f.ny = std::stoi(tok[2]);
                f.spacing = to_double(tok[3]);
                f.ue_height = to_double(tok[4]);
                f.bs_position = {to_double(tok[5]), to_double(tok[6]), to_double(tok[7])};
                f.f_c = to_double(tok[8]);
                f.max_paths = std::stoi(tok[9]);
                if (f.nx < 1 || f.ny < 1)
                    throw std::invalid_argument("grid dimensions must be positive");
                f.anchors.assign(static_cast<std::size_t>(f.nx) * f.ny, Mcpp{});
                have_grid = true;
                continue;
            }
            if (!have_grid)
                throw std::invalid_argument("row before the #field line");
            if (tok.size() != 10)
                throw std::invalid_argument("expected 10 columns");
            const int ix = std::stoi(tok[0]), iy = std::stoi(tok[1]);
            if (ix < 0 || ix >= f.nx || iy < 0 || iy >= f.ny)
                throw std::invalid_argument("anchor index out of range");
            ScpEntry s;
            s.u_tx = {to_double(tok[2]), to_double(tok[3]), to_double(tok[4])};
            s.u_rx = {to_double(tok[5]), to_double(tok[6]), to_double(tok[7])};
            s.tau = to_double(tok[8]);
            s.p = to_double(tok[9]);
            f.anchors[f.index(ix, iy)].paths.push_back(s);
        }
        catch (const std::exception &e)
        {
            throw std::invalid_argument("field csv line " + std::to_string(line_no) + ": " + e.what());
        }
    }
    if (!have_grid)
        throw std::invalid_argument("field csv: missing #field line");
    return f;
}

void write_samples_csv(std::ostream &os, const std::vector<AnchorSample> &samples, std::span<const BeamSpec> beams)
{
    os << "x_m,y_m,xi_y,xi_z,rsrp_db\n";
    for (const AnchorSample &s : samples)
        for (std::size_t b = 0; b < beams.size(); ++b)
            os << format_double(s.x) << ',' << format_double(s.y) << ',' << format_double(beams[b].xi_y) << ','
               << format_double(beams[b].xi_z) << ',' << format_double(s.rsrp_db.at(b)) << '\n';
}

std::vector<AnchorSample> read_samples_csv(std::istream &is, std::vector<BeamSpec> &beams)
{
    beams.clear();
    std::vector<AnchorSample> out;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(is, line))
    {
        ++line_no;
        if (line.empty() || line.rfind("x_m", 0) == 0)
            continue;
        const auto tok = split_csv(line);
        if (tok.size() != 5)
            throw std::invalid_argument("dataset csv line " + std::to_string(line_no) + ": expected 5 columns");
        const double x = to_double(tok[0]), y = to_double(tok[1]);
        const BeamSpec beam{to_double(tok[2]), to_double(tok[3])};
        const double v = to_double(tok[4]);
        if (out.empty() || out.back().x != x || out.back().y != y)
        {
            AnchorSample s;
            s.anchor = out.size();
            s.x = x;
            s.y = y;
            out.push_back(std::move(s));
        }
        auto it = std::find(beams.begin(), beams.end(), beam);
        if (it == beams.end())
        {
            if (out.size() > 1)
                throw std::invalid_argument("dataset csv line " + std::to_string(line_no) +
                                            ": beam not present for the first anchor");
            beams.push_back(beam);
            it = beams.end() - 1;
        }
        AnchorSample &s = out.back();
        const auto b = static_cast<std::size_t>(it - beams.begin());
        if (b != s.rsrp_db.size())
            throw std::invalid_argument("dataset csv line " + std::to_string(line_no) + ": beams out of order");
        s.rsrp_db.push_back(v);
    }
    for (const AnchorSample &s : out)
        if (s.rsrp_db.size() != beams.size())
            throw std::invalid_argument("dataset csv: anchor at (" + format_double(s.x) + ", " + format_double(s.y) +
                                        ") is missing beams");
    return out;
}

void write_text_file(const std::string &path, const std::string &text)
{
    std::ofstream os(path, std::ios::binary);
    if (!os)
        throw std::runtime_error("cannot open '" + path + "' for writing");
    os << text;
    if (!os)
        throw std::runtime_error("write to '" + path + "' failed");
}

std::string read_text_file(const std::string &path)
{
    std::ifstream is(path, std::ios::binary);
    if (!is)
        throw std::runtime_error("cannot open '" + path + "'");
    std::ostringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

} // namespace nbf
