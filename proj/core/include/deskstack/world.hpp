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

#ifndef DESKSTACK_WORLD_HPP
#define DESKSTACK_WORLD_HPP

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "deskstack/common.hpp"

namespace desk::world {

// 2-D tabletop in [0,1] x [0,1] units, rasterized on a 16x16 grid at 10 Hz.
constexpr int kGrid = 16;
constexpr int kCells = kGrid * kGrid;
constexpr int kHz = 10;
constexpr float kMaxDelta = 0.1f;

// Palette codes. 0 empty, 1..8 tablecloth, 16..31 objects, then markers.
constexpr int kCodeEmpty = 0;
constexpr int kClothMin = 1;
constexpr int kClothMax = 8;
constexpr int kObjectCodeMin = 16;
constexpr int kObjectCodeMax = 31;
constexpr int kCodeGripperOpen = 32;
constexpr int kCodeGripperClosed = 33;
constexpr int kCodePlate = 34;
constexpr int kPaletteSize = 64;

// Training object codes vs held-out codes for OOD scenario kinds.
constexpr int kTrainCodeMin = 16;
constexpr int kTrainCodeMax = 20;
constexpr int kHeldOutCodeMin = 21;
constexpr int kHeldOutCodeMax = 31;

constexpr float kGraspDistance = 0.05f;
constexpr float kGraspMaxZ = 0.1f;
constexpr float kOpenThreshold = 0.5f;
constexpr float kApproachDistance = 0.08f;
constexpr float kApproachMaxZ = 0.3f;

std::string_view object_name(int palette_code);
std::string_view object_category(int palette_code);

// Per-step delta for (x, y, z, gripper openness). Components outside
// [-0.1, 0.1] are a construction error, never clamped.
struct Action {
    float dx = 0.0f, dy = 0.0f, dz = 0.0f, dg = 0.0f;

    Action() = default;
    Action(float x, float y, float z, float g);
    std::array<float, 4> values() const { return {dx, dy, dz, dg}; }
};

struct ObjectState {
    int id = 0;
    int palette_code = 0;
    float x = 0.0f, y = 0.0f;
    bool held = false;
};

struct Plate {
    float x = 0.0f, y = 0.0f;
    float radius = 0.0f;
};

struct WorldState {
    float gx = 0.0f, gy = 0.0f, gz = 0.0f;
    float gripper_open = 1.0f;
    std::vector<ObjectState> objects;
    Plate plate;
    int tablecloth = 1;
    int step_index = 0;
    std::uint64_t rng_seed = 0;

    const ObjectState* find_object(int id) const;
    void validate() const;
};

struct Raster {
    int view_id = 0;  // 0 = head (full table), 1 = wrist (window on gripper)
    std::array<std::uint8_t, kCells> grid{};

    bool operator==(const Raster&) const = default;
};

enum class ScenarioKind { kInDomain, kUnseenDistractor, kUnseenTarget, kNovel };

std::string_view to_string(ScenarioKind kind);
ScenarioKind scenario_kind_from_string(std::string_view s);

struct ScenarioDescriptor {
    ScenarioKind kind = ScenarioKind::kInDomain;
    int layout_id = 0;
    int tablecloth = 1;
    int target_code = kTrainCodeMin;
    // Object i has palette code object_codes[i] at positions[i]; ids are 0..n-1
    // and the target object is the one whose code equals target_code.
    std::vector<int> object_codes;
    std::vector<std::array<float, 2>> positions;
    Plate plate;
    std::uint64_t seed = 0;

    int target_id() const;
    std::string instruction() const;
};

// Ground-truth expert phase structure, recorded at generation time.
struct ExpertPhase {
    std::string label;
    int end_frame = 0;  // state index at which the phase completes
};

struct Episode {
    std::string instruction;
    std::uint64_t seed = 0;
    ScenarioDescriptor scenario;
    std::vector<WorldState> states;
    std::vector<Action> actions;
    std::vector<std::array<Raster, 2>> rasters;
    std::vector<ExpertPhase> expert_phases;  // empty for non-expert episodes

    int length() const { return static_cast<int>(states.size()); }
    int target_id() const { return scenario.target_id(); }
};

// Pure transition: pose += delta then clamp to [0,1]; grasp on an open->closed
// crossing within reach, release on a closed->open crossing.
WorldState step(const WorldState& state, const Action& action);

// Deterministic [head, wrist] rasters. Paint order: cloth, plate, objects,
// gripper marker last. Wrist is the 16x16 window centered on the gripper
// cell; cells falling outside the table are coded 0.
std::array<Raster, 2> render(const WorldState& state);

int pose_cell(float v);  // continuous [0,1] -> grid index

// Initial state for a scenario; the seed jitters the gripper start pose.
WorldState initial_state(const ScenarioDescriptor& scenario, std::uint64_t seed);

// Eight-phase scripted pick-and-place demonstration
// (approach, descend, close, lift, move, descend, open, retreat).
// The close/open phases end exactly at their openness threshold crossings.
Episode scripted_expert(const ScenarioDescriptor& scenario, std::uint64_t seed);

std::vector<ScenarioDescriptor> gen_scenarios(ScenarioKind kind, int count,
                                              std::uint64_t seed);
int scenario_capacity(ScenarioKind kind);

struct Metrics {
    int approach = 0;
    int success = 0;
};

Metrics success_metrics(const Episode& episode, int target_id);

}  // namespace desk::world

#endif  // DESKSTACK_WORLD_HPP
