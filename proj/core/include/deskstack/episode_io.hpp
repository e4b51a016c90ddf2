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

#ifndef DESKSTACK_EPISODE_IO_HPP
#define DESKSTACK_EPISODE_IO_HPP

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "deskstack/milestone.hpp"
#include "deskstack/world.hpp"

namespace desk::io {

struct LabeledEpisode {
    world::Episode episode;
    std::optional<milestone::MilestonePlan> plan;
};

// One JSON document per episode. Floats are written with 9 significant
// digits, which round-trips binary32 exactly, so replay is byte-stable.
void save_episode(const std::filesystem::path& path,
                  const world::Episode& episode,
                  const milestone::MilestonePlan* plan = nullptr);

LabeledEpisode load_episode(const std::filesystem::path& path);

// Episode files in a directory, sorted by filename.
std::vector<std::filesystem::path> list_episode_files(
    const std::filesystem::path& dir);

}  // namespace desk::io

#endif  // DESKSTACK_EPISODE_IO_HPP
