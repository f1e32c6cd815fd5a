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

#include "nbf/tensor.hpp"

#include <json.hpp>

#include <string>
#include <string_view>
#include <vector>

namespace nbf
{

struct NamedTensor
{
    std::string name;
    ad::Shape shape;
    std::vector<double> values;
    bool operator==(const NamedTensor &) const = default;
};

/// Single-file checkpoint: the magic "NBFCKPT1", a little-endian uint64
/// manifest length, a JSON manifest (meta plus tensor names, shapes and
/// offsets), then every tensor as raw little-endian float64 in list order.
struct Checkpoint
{
    nlohmann::json meta = nlohmann::json::object();
    std::vector<NamedTensor> tensors;

    const NamedTensor &at(const std::string &name) const;
    bool operator==(const Checkpoint &) const = default;
};

std::string serialize_checkpoint(const Checkpoint &ckpt);
Checkpoint parse_checkpoint(std::string_view bytes);

/// Returns the number of bytes written.
std::size_t save_checkpoint(const std::string &path, const Checkpoint &ckpt);
Checkpoint load_checkpoint(const std::string &path);

} // namespace nbf
