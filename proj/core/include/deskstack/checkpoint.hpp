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

#ifndef DESKSTACK_CHECKPOINT_HPP
#define DESKSTACK_CHECKPOINT_HPP

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace desk::ckpt {

// VSTM container: magic, version u16, model kind u16, then named tensors
// (name length u16, name bytes, rank u8, dims u32[], f32 data) in
// declaration order, little-endian throughout.

enum class ModelKind : std::uint16_t {
    kContextMlp = 1,
    kFlowPolicy = 2,
    kCountModel = 3,
};

struct NamedTensor {
    std::string name;
    std::vector<std::uint32_t> dims;
    std::vector<float> data;

    static NamedTensor scalar(std::string name, float v);
    static NamedTensor vector(std::string name, std::vector<float> v);
    static NamedTensor matrix(std::string name, std::uint32_t rows,
                              std::uint32_t cols, std::vector<float> v);
};

void write_checkpoint(const std::filesystem::path& path, ModelKind kind,
                      std::span<const NamedTensor> tensors);

std::pair<ModelKind, std::vector<NamedTensor>> read_checkpoint(
    const std::filesystem::path& path);

ModelKind peek_kind(const std::filesystem::path& path);

// Lookup helper; throws when the tensor is missing.
const NamedTensor& find_tensor(std::span<const NamedTensor> tensors,
                               std::string_view name);

}  // namespace desk::ckpt

#endif  // DESKSTACK_CHECKPOINT_HPP
