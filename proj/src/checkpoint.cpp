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

#include "nbf/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace nbf
{

namespace
{

constexpr std::string_view kMagic = "NBFCKPT1";

void put_u64(std::string &out, std::uint64_t v)
{
    for (int i = 0; i < 8; ++i)
        out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

std::uint64_t get_u64(std::string_view in, std::size_t pos)
{
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i)
        v |= static_cast<std::uint64_t>(static_cast<unsigned char>(in[pos + i])) << (8 * i);
    return v;
}

} // namespace

const NamedTensor &Checkpoint::at(const std::string &name) const
{
    for (const NamedTensor &t : tensors)
        if (t.name == name)
            return t;
    throw std::out_of_range("checkpoint: no tensor named '" + name + "'");
}

std::string serialize_checkpoint(const Checkpoint &ckpt)
{
    nlohmann::json manifest;
    manifest["meta"] = ckpt.meta;
    manifest["tensors"] = nlohmann::json::array();
    std::size_t offset = 0;
    for (const NamedTensor &t : ckpt.tensors)
    {
        if (ad::numel(t.shape) != t.values.size())
            throw std::invalid_argument("checkpoint: tensor '" + t.name + "' has shape " + ad::shape_str(t.shape) +
                                        " but " + std::to_string(t.values.size()) + " values");
        manifest["tensors"].push_back({{"name", t.name}, {"shape", t.shape}, {"offset", offset}});
        offset += t.values.size();
    }
    const std::string text = manifest.dump();

    std::string out(kMagic);
    put_u64(out, text.size());
    out += text;
    out.reserve(out.size() + offset * 8);
    for (const NamedTensor &t : ckpt.tensors)
        for (double v : t.values)
            put_u64(out, std::bit_cast<std::uint64_t>(v));
    return out;
}

Checkpoint parse_checkpoint(std::string_view bytes)
{
    if (bytes.size() < kMagic.size() + 8 || bytes.substr(0, kMagic.size()) != kMagic)
        throw std::invalid_argument("checkpoint: bad magic");
    const std::uint64_t len = get_u64(bytes, kMagic.size());
    const std::size_t data_start = kMagic.size() + 8 + len;
    if (data_start > bytes.size())
        throw std::invalid_argument("checkpoint: truncated manifest");
    const auto manifest = nlohmann::json::parse(bytes.substr(kMagic.size() + 8, len));

    Checkpoint ckpt;
    ckpt.meta = manifest.at("meta");
    std::size_t expected = 0;
    for (const auto &entry : manifest.at("tensors"))
    {
        NamedTensor t;
        t.name = entry.at("name").get<std::string>();
        t.shape = entry.at("shape").get<ad::Shape>();
        const auto offset = entry.at("offset").get<std::size_t>();
        if (offset != expected)
            throw std::invalid_argument("checkpoint: tensor '" + t.name + "' has a non-contiguous offset");
        const std::size_t n = ad::numel(t.shape);
        if (data_start + (offset + n) * 8 > bytes.size())
            throw std::invalid_argument("checkpoint: truncated data for '" + t.name + "'");
        t.values.resize(n);
        for (std::size_t i = 0; i < n; ++i)
            t.values[i] = std::bit_cast<double>(get_u64(bytes, data_start + (offset + i) * 8));
        expected += n;
        ckpt.tensors.push_back(std::move(t));
    }
    if (data_start + expected * 8 != bytes.size())
        throw std::invalid_argument("checkpoint: trailing bytes after tensor data");
    return ckpt;
}

std::size_t save_checkpoint(const std::string &path, const Checkpoint &ckpt)
{
    const std::string bytes = serialize_checkpoint(ckpt);
    std::ofstream os(path, std::ios::binary);
    if (!os)
        throw std::runtime_error("checkpoint: cannot open '" + path + "' for writing");
    os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!os)
        throw std::runtime_error("checkpoint: write to '" + path + "' failed");
    return bytes.size();
}

Checkpoint load_checkpoint(const std::string &path)
{
    std::ifstream is(path, std::ios::binary);
    if (!is)
        throw std::runtime_error("checkpoint: cannot open '" + path + "'");
    std::ostringstream ss;
    ss << is.rdbuf();
    return parse_checkpoint(ss.str());
}

} // namespace nbf
