// Copyright 2026 The deskstack Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "deskstack/checkpoint.hpp"

#include <cstring>

#include "binary_io.hpp"

namespace desk::ckpt {

namespace {
constexpr char kMagic[4] = {'V', 'S', 'T', 'M'};
constexpr std::uint16_t kVersion = 1;
}  // namespace

NamedTensor NamedTensor::scalar(std::string name, float v) {
    return {std::move(name), {}, {v}};
}

NamedTensor NamedTensor::vector(std::string name, std::vector<float> v) {
    NamedTensor t{std::move(name), {static_cast<std::uint32_t>(v.size())},
                  std::move(v)};
    return t;
}

NamedTensor NamedTensor::matrix(std::string name, std::uint32_t rows,
                                std::uint32_t cols, std::vector<float> v) {
    if (v.size() != static_cast<std::size_t>(rows) * cols) {
        throw ValidationError("tensor data does not match dims");
    }
    return {std::move(name), {rows, cols}, std::move(v)};
}

void write_checkpoint(const std::filesystem::path& path, ModelKind kind,
                      std::span<const NamedTensor> tensors) {
    binio::Writer w(path.string());
    w.bytes(kMagic, 4);
    w.u16(kVersion);
    w.u16(static_cast<std::uint16_t>(kind));
    for (const auto& t : tensors) {
        w.u16(static_cast<std::uint16_t>(t.name.size()));
        w.bytes(t.name.data(), t.name.size());
        w.u8(static_cast<std::uint8_t>(t.dims.size()));
        std::size_t expected = 1;
        for (auto d : t.dims) {
            w.u32(d);
            expected *= d;
        }
        if (t.data.size() != expected) {
            throw ValidationError("tensor " + t.name + " data size mismatch");
        }
        for (float v : t.data) w.f32(v);
    }
    w.close();
}

std::pair<ModelKind, std::vector<NamedTensor>> read_checkpoint(
    const std::filesystem::path& path) {
    binio::Reader r(path.string());
    char magic[4];
    r.bytes(magic, 4);
    if (std::memcmp(magic, kMagic, 4) != 0) {
        throw ValidationError("not a VSTM checkpoint: " + path.string());
    }
    if (r.u16() != kVersion) {
        throw ValidationError("unsupported VSTM version in " + path.string());
    }
    const auto kind = static_cast<ModelKind>(r.u16());
    std::vector<NamedTensor> tensors;
    while (!r.at_eof()) {
        NamedTensor t;
        const auto name_len = r.u16();
        t.name.resize(name_len);
        r.bytes(t.name.data(), name_len);
        const auto rank = r.u8();
        std::size_t count = 1;
        for (int d = 0; d < rank; ++d) {
            t.dims.push_back(r.u32());
            count *= t.dims.back();
        }
        t.data.resize(count);
        for (std::size_t i = 0; i < count; ++i) t.data[i] = r.f32();
        tensors.push_back(std::move(t));
    }
    return {kind, std::move(tensors)};
}

ModelKind peek_kind(const std::filesystem::path& path) {
    binio::Reader r(path.string());
    char magic[4];
    r.bytes(magic, 4);
    if (std::memcmp(magic, kMagic, 4) != 0) {
        throw ValidationError("not a VSTM checkpoint: " + path.string());
    }
    r.u16();
    return static_cast<ModelKind>(r.u16());
}

const NamedTensor& find_tensor(std::span<const NamedTensor> tensors,
                               std::string_view name) {
    for (const auto& t : tensors) {
        if (t.name == name) return t;
    }
    throw ValidationError("checkpoint tensor missing: " + std::string(name));
}

}  // namespace desk::ckpt
