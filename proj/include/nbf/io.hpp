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

#include <json.hpp>

#include <iosfwd>
#include <string>

namespace nbf
{

// JSON forms of the configuration types. Angles are stored in radians;
// readers also accept a "<name>_deg" key in degrees.
void to_json(nlohmann::json &j, const PanelOrientation &o);
void from_json(const nlohmann::json &j, PanelOrientation &o);
void to_json(nlohmann::json &j, const ErpConfig &e);
void from_json(const nlohmann::json &j, ErpConfig &e);
void to_json(nlohmann::json &j, const ArrayConfig &a);
void from_json(const nlohmann::json &j, ArrayConfig &a);
void to_json(nlohmann::json &j, const BeamSpec &b);
void from_json(const nlohmann::json &j, BeamSpec &b);
void to_json(nlohmann::json &j, const Vec3 &v);
void from_json(const nlohmann::json &j, Vec3 &v);
void to_json(nlohmann::json &j, const Box &b);
void from_json(const nlohmann::json &j, Box &b);
void to_json(nlohmann::json &j, const SiteConfig &s);
void from_json(const nlohmann::json &j, SiteConfig &s);
void to_json(nlohmann::json &j, const HybridConfig &h);
void from_json(const nlohmann::json &j, HybridConfig &h);

/// Reads `key` (radians) or `key_deg` (degrees) if present.
void read_angle(const nlohmann::json &j, const std::string &key, double &out);

/// "%.17g" text; parses back to the identical double.
std::string format_double(double v);

/// Field CSV: a "#field,..." line with the grid, the column header, then one
/// row per (anchor, path) in anchor-major, canonical path order.
void write_field_csv(std::ostream &os, const McppField &field);
McppField read_field_csv(std::istream &is);

/// Dataset CSV: x_m,y_m,xi_y,xi_z,rsrp_db, one row per (anchor, beam).
void write_samples_csv(std::ostream &os, const std::vector<AnchorSample> &samples, std::span<const BeamSpec> beams);
/// Groups rows back into anchors (consecutive rows with equal position).
/// Beams are taken in order of first appearance; MCPPs are left empty.
std::vector<AnchorSample> read_samples_csv(std::istream &is, std::vector<BeamSpec> &beams);

void write_text_file(const std::string &path, const std::string &text);
std::string read_text_file(const std::string &path);

} // namespace nbf
