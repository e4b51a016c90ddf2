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

#include "deskstack/world.hpp"

#include <algorithm>
#include <cmath>

namespace desk::world {

namespace {

constexpr float kExpertStep = 0.08f;
constexpr float kExpertGraspZ = 0.05f;
constexpr float kExpertTravelZ = 0.5f;
constexpr float kExpertDropZ = 0.15f;
constexpr float kPlateRadius = 0.12f;
constexpr float kObjectMinGap = 0.14f;
constexpr float kObjectPlateGap = kPlateRadius + 0.10f;
constexpr int kFixedLayouts = 24;

float clamp01(float v) { return std::min(1.0f, std::max(0.0f, v)); }

float dist2(float ax, float ay, float bx, float by) {
    const float dx = ax - bx, dy = ay - by;
    return std::sqrt(dx * dx + dy * dy);
}

struct NameEntry {
    int code;
    std::string_view name;
    std::string_view category;
};

constexpr NameEntry kNames[] = {
    {16, "egg", "food"},      {17, "can", "drink"},   {18, "apple", "fruit"},
    {19, "milk", "dairy"},    {20, "bread", "bread"}, {21, "banana", "fruit"},
    {22, "grape", "fruit"},   {23, "lemon", "fruit"}, {24, "pear", "fruit"},
    {25, "mango", "fruit"},   {26, "bottle", "drink"},{27, "cup", "drink"},
    {28, "bagel", "bread"},   {29, "donut", "pastry"},{30, "box", "box"},
    {31, "soap", "household"},
};

const NameEntry& name_entry(int code) {
    for (const auto& e : kNames) {
        if (e.code == code) return e;
    }
    throw ValidationError("unknown object palette code " + std::to_string(code));
}

}  // namespace

std::string_view object_name(int code) { return name_entry(code).name; }
std::string_view object_category(int code) { return name_entry(code).category; }

Action::Action(float x, float y, float z, float g) : dx(x), dy(y), dz(z), dg(g) {
    for (float v : {x, y, z, g}) {
        if (!(std::fabs(v) <= kMaxDelta)) {
            throw ValidationError("action component " + std::to_string(v) +
                                  " outside [-0.1, 0.1]");
        }
    }
}

const ObjectState* WorldState::find_object(int id) const {
    for (const auto& o : objects) {
        if (o.id == id) return &o;
    }
    return nullptr;
}

void WorldState::validate() const {
    auto in01 = [](float v) { return v >= 0.0f && v <= 1.0f; };
    if (!in01(gx) || !in01(gy) || !in01(gz) || !in01(gripper_open)) {
        throw ValidationError("world state coordinates outside [0,1]");
    }
    int held = 0;
    for (const auto& o : objects) {
        if (o.held) ++held;
        if (!in01(o.x) || !in01(o.y)) {
            throw ValidationError("object position outside [0,1]");
        }
        if (o.palette_code < kObjectCodeMin || o.palette_code > kObjectCodeMax) {
            throw ValidationError("object palette code outside 16..31");
        }
        for (const auto& p : objects) {
            if (&o != &p && o.palette_code == p.palette_code) {
                throw ValidationError("duplicate object palette code");
            }
        }
    }
    if (held > 1) throw ValidationError("more than one held object");
    if (tablecloth < kClothMin || tablecloth > kClothMax) {
        throw ValidationError("tablecloth code outside 1..8");
    }
}

WorldState step(const WorldState& state, const Action& action) {
    WorldState next = state;
    next.gx = clamp01(state.gx + action.dx);
    next.gy = clamp01(state.gy + action.dy);
    next.gz = clamp01(state.gz + action.dz);
    next.gripper_open = clamp01(state.gripper_open + action.dg);
    next.step_index = state.step_index + 1;

    const bool was_open = state.gripper_open >= kOpenThreshold;
    const bool now_open = next.gripper_open >= kOpenThreshold;

    int held_idx = -1;
    for (std::size_t i = 0; i < next.objects.size(); ++i) {
        if (next.objects[i].held) held_idx = static_cast<int>(i);
    }

    if (held_idx >= 0) {
        auto& obj = next.objects[static_cast<std::size_t>(held_idx)];
        obj.x = next.gx;
        obj.y = next.gy;
        if (!was_open && now_open) obj.held = false;
    } else if (was_open && !now_open && next.gz <= kGraspMaxZ) {
        int best = -1;
        float best_d = kGraspDistance;
        for (std::size_t i = 0; i < next.objects.size(); ++i) {
            const float d = dist2(next.gx, next.gy, next.objects[i].x,
                                  next.objects[i].y);
            if (d <= best_d) {
                best_d = d;
                best = static_cast<int>(i);
            }
        }
        if (best >= 0) {
            auto& obj = next.objects[static_cast<std::size_t>(best)];
            obj.held = true;
            obj.x = next.gx;
            obj.y = next.gy;
        }
    }
    return next;
}

int pose_cell(float v) {
    const int c = static_cast<int>(std::floor(v * kGrid));
    return std::min(kGrid - 1, std::max(0, c));
}

namespace {

// Scene cell at grid (row, col); row indexes y, col indexes x. Returns the
// code before the gripper marker is applied.
std::uint8_t scene_code(const WorldState& s, int row, int col) {
    std::uint8_t code = static_cast<std::uint8_t>(s.tablecloth);
    if (s.plate.radius > 0.0f) {
        const float cx = (static_cast<float>(col) + 0.5f) / kGrid;
        const float cy = (static_cast<float>(row) + 0.5f) / kGrid;
        if (dist2(cx, cy, s.plate.x, s.plate.y) <= s.plate.radius) {
            code = kCodePlate;
        }
    }
    for (const auto& o : s.objects) {
        if (pose_cell(o.x) == col && pose_cell(o.y) == row) {
            code = static_cast<std::uint8_t>(o.palette_code);
        }
    }
    return code;
}

}  // namespace

std::array<Raster, 2> render(const WorldState& s) {
    std::array<Raster, 2> out;
    out[0].view_id = 0;
    out[1].view_id = 1;

    const int gcol = pose_cell(s.gx);
    const int grow = pose_cell(s.gy);
    const std::uint8_t marker = s.gripper_open >= kOpenThreshold
                                    ? kCodeGripperOpen
                                    : kCodeGripperClosed;

    for (int row = 0; row < kGrid; ++row) {
        for (int col = 0; col < kGrid; ++col) {
            std::uint8_t code = scene_code(s, row, col);
            if (row == grow && col == gcol) code = marker;
            out[0].grid[static_cast<std::size_t>(row * kGrid + col)] = code;
        }
    }
    // Wrist window: cell (8,8) sits on the gripper cell; off-table cells are 0.
    for (int row = 0; row < kGrid; ++row) {
        for (int col = 0; col < kGrid; ++col) {
            const int srow = grow - kGrid / 2 + row;
            const int scol = gcol - kGrid / 2 + col;
            std::uint8_t code = kCodeEmpty;
            if (srow >= 0 && srow < kGrid && scol >= 0 && scol < kGrid) {
                code = out[0].grid[static_cast<std::size_t>(srow * kGrid + scol)];
            }
            out[1].grid[static_cast<std::size_t>(row * kGrid + col)] = code;
        }
    }
    return out;
}

int ScenarioDescriptor::target_id() const {
    for (std::size_t i = 0; i < object_codes.size(); ++i) {
        if (object_codes[i] == target_code) return static_cast<int>(i);
    }
    throw ValidationError("scenario target code not among object codes");
}

std::string ScenarioDescriptor::instruction() const {
    return "put the " + std::string(object_name(target_code)) + " on the plate";
}

std::string_view to_string(ScenarioKind kind) {
    switch (kind) {
        case ScenarioKind::kInDomain: return "in_domain";
        case ScenarioKind::kUnseenDistractor: return "unseen_distractor";
        case ScenarioKind::kUnseenTarget: return "unseen_target";
        case ScenarioKind::kNovel: return "novel";
    }
    return "unknown";
}

ScenarioKind scenario_kind_from_string(std::string_view s) {
    if (s == "in_domain") return ScenarioKind::kInDomain;
    if (s == "unseen_distractor") return ScenarioKind::kUnseenDistractor;
    if (s == "unseen_target") return ScenarioKind::kUnseenTarget;
    if (s == "novel") return ScenarioKind::kNovel;
    throw ValidationError("unknown scenario kind: " + std::string(s));
}

namespace {

struct Layout {
    Plate plate;
    std::vector<std::array<float, 2>> positions;
    int tablecloth;
};

std::vector<std::array<float, 2>> sample_positions(Rng& rng, const Plate& plate,
                                                   int n, float ymin) {
    std::vector<std::array<float, 2>> pts;
    int tries = 0;
    while (static_cast<int>(pts.size()) < n) {
        if (++tries > 10000) {
            throw RuntimeFailure("layout sampling failed to converge");
        }
        const float x = static_cast<float>(rng.uniform(0.12, 0.88));
        const float y = static_cast<float>(rng.uniform(ymin, 0.88));
        if (dist2(x, y, plate.x, plate.y) < kObjectPlateGap) continue;
        bool ok = true;
        for (const auto& p : pts) {
            if (dist2(x, y, p[0], p[1]) < kObjectMinGap) ok = false;
        }
        if (!ok) continue;
        pts.push_back({x, y});
    }
    return pts;
}

// Fixed layouts are a function of the layout index only.
Layout fixed_layout(int k) {
    static const std::array<Plate, 4> kPlates = {{
        {0.80f, 0.30f, kPlateRadius},
        {0.20f, 0.30f, kPlateRadius},
        {0.50f, 0.24f, kPlateRadius},
        {0.76f, 0.70f, kPlateRadius},
    }};
    Layout layout;
    layout.plate = kPlates[static_cast<std::size_t>(k % 4)];
    layout.tablecloth = 1 + k % 3;
    Rng rng(0xDE5C0000ull + static_cast<std::uint64_t>(k));
    layout.positions = sample_positions(rng, layout.plate, 5, 0.40f);
    return layout;
}

std::vector<int> shuffled_indices(int n, Rng& rng) {
    std::vector<int> idx(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) idx[static_cast<std::size_t>(i)] = i;
    for (int i = n - 1; i > 0; --i) {
        const auto j = rng.uniform_int(0, i);
        std::swap(idx[static_cast<std::size_t>(i)],
                  idx[static_cast<std::size_t>(j)]);
    }
    return idx;
}

}  // namespace

int scenario_capacity(ScenarioKind kind) {
    switch (kind) {
        case ScenarioKind::kInDomain:
        case ScenarioKind::kUnseenDistractor:
            return kFixedLayouts * 5;  // layouts x target slots
        case ScenarioKind::kUnseenTarget:
            return kFixedLayouts * 11;  // layouts x held-out codes
        case ScenarioKind::kNovel:
            return 11 * 8;  // held-out targets x tablecloth codes
    }
    return 0;
}

std::vector<ScenarioDescriptor> gen_scenarios(ScenarioKind kind, int count,
                                              std::uint64_t seed) {
    if (count < 1) throw ValidationError("scenario count must be >= 1");
    const int cap = scenario_capacity(kind);
    if (count > cap) {
        throw ValidationError("requested " + std::to_string(count) + " " +
                              std::string(to_string(kind)) +
                              " scenarios but distinct layout capacity is " +
                              std::to_string(cap));
    }

    Rng rng(mix_seed(seed, static_cast<std::uint64_t>(kind) + 1));
    const auto order = shuffled_indices(cap, rng);
    std::vector<ScenarioDescriptor> out;
    out.reserve(static_cast<std::size_t>(count));

    for (int i = 0; i < count; ++i) {
        const int pick = order[static_cast<std::size_t>(i)];
        ScenarioDescriptor sc;
        sc.kind = kind;
        sc.seed = mix_seed(seed, static_cast<std::uint64_t>(pick) + 0x5Cull);
        Rng srng(sc.seed);

        if (kind == ScenarioKind::kNovel) {
            const int target = kHeldOutCodeMin + pick % 11;
            sc.tablecloth = 1 + pick / 11;
            sc.layout_id = 1000 + pick;
            sc.target_code = target;
            sc.plate = {static_cast<float>(srng.uniform(0.20, 0.80)),
                        static_cast<float>(srng.uniform(0.20, 0.80)),
                        kPlateRadius};
            sc.positions = sample_positions(srng, sc.plate, 5, 0.30f);
            sc.object_codes.push_back(target);
            std::vector<int> pool;
            for (int c = kHeldOutCodeMin; c <= kHeldOutCodeMax; ++c) {
                if (c != target) pool.push_back(c);
            }
            for (int d = 0; d < 4; ++d) {
                const auto j = srng.uniform_int(
                    0, static_cast<std::int64_t>(pool.size()) - 1);
                sc.object_codes.push_back(pool[static_cast<std::size_t>(j)]);
                pool.erase(pool.begin() + j);
            }
            out.push_back(std::move(sc));
            continue;
        }

        const int layout_id = pick % kFixedLayouts;
        const Layout layout = fixed_layout(layout_id);
        sc.layout_id = layout_id;
        sc.tablecloth = layout.tablecloth;
        sc.plate = layout.plate;
        sc.positions = layout.positions;
        sc.object_codes = {16, 17, 18, 19, 20};

        if (kind == ScenarioKind::kInDomain) {
            sc.target_code = kTrainCodeMin + pick / kFixedLayouts;
        } else if (kind == ScenarioKind::kUnseenDistractor) {
            sc.target_code = kTrainCodeMin + pick / kFixedLayouts;
            const int swaps = static_cast<int>(srng.uniform_int(1, 3));
            std::vector<int> held;
            for (int c = kHeldOutCodeMin; c <= kHeldOutCodeMax; ++c) {
                held.push_back(c);
            }
            std::vector<int> slots;
            for (int s = 0; s < 5; ++s) {
                if (sc.object_codes[static_cast<std::size_t>(s)] !=
                    sc.target_code) {
                    slots.push_back(s);
                }
            }
            for (int w = 0; w < swaps; ++w) {
                const auto si = srng.uniform_int(
                    0, static_cast<std::int64_t>(slots.size()) - 1);
                const auto hi = srng.uniform_int(
                    0, static_cast<std::int64_t>(held.size()) - 1);
                sc.object_codes[static_cast<std::size_t>(
                    slots[static_cast<std::size_t>(si)])] =
                    held[static_cast<std::size_t>(hi)];
                slots.erase(slots.begin() + si);
                held.erase(held.begin() + hi);
            }
        } else {  // unseen target
            sc.target_code = kHeldOutCodeMin + pick / kFixedLayouts;
            const auto slot = srng.uniform_int(0, 4);
            sc.object_codes[static_cast<std::size_t>(slot)] = sc.target_code;
        }
        out.push_back(std::move(sc));
    }
    return out;
}

WorldState initial_state(const ScenarioDescriptor& scenario, std::uint64_t seed) {
    WorldState s;
    Rng rng(mix_seed(seed, 0x57A4Dull));
    s.gx = static_cast<float>(rng.uniform(0.08, 0.92));
    s.gy = static_cast<float>(rng.uniform(0.04, 0.14));
    s.gz = kExpertTravelZ;
    s.gripper_open = 0.75f;
    s.plate = scenario.plate;
    s.tablecloth = scenario.tablecloth;
    s.rng_seed = seed;
    for (std::size_t i = 0; i < scenario.object_codes.size(); ++i) {
        ObjectState o;
        o.id = static_cast<int>(i);
        o.palette_code = scenario.object_codes[i];
        o.x = scenario.positions[i][0];
        o.y = scenario.positions[i][1];
        s.objects.push_back(o);
    }
    s.validate();
    return s;
}

namespace {

// Per-axis proportional step toward a target point, max-norm kExpertStep.
Action toward_xy(const WorldState& s, float tx, float ty) {
    const float rx = tx - s.gx;
    const float ry = ty - s.gy;
    const float m = std::max(std::fabs(rx), std::fabs(ry));
    if (m <= kExpertStep) return Action(rx, ry, 0.0f, 0.0f);
    const float scale = kExpertStep / m;
    return Action(rx * scale, ry * scale, 0.0f, 0.0f);
}

float step_scalar(float current, float target) {
    const float r = target - current;
    if (std::fabs(r) <= kExpertStep) return r;
    return r > 0 ? kExpertStep : -kExpertStep;
}

}  // namespace

Episode scripted_expert(const ScenarioDescriptor& scenario, std::uint64_t seed) {
    Episode ep;
    ep.scenario = scenario;
    ep.seed = seed;
    ep.instruction = scenario.instruction();

    WorldState s = initial_state(scenario, seed);
    const int target_id = scenario.target_id();
    {
        const auto* t = s.find_object(target_id);
        if (dist2(t->x, t->y, s.plate.x, s.plate.y) <= s.plate.radius) {
            throw ValidationError("target occluded by plate at spawn");
        }
    }
    const float tx = s.find_object(target_id)->x;
    const float ty = s.find_object(target_id)->y;

    ep.states.push_back(s);
    ep.rasters.push_back(render(s));

    auto apply = [&](const Action& a) {
        s = step(s, a);
        ep.actions.push_back(a);
        ep.states.push_back(s);
        ep.rasters.push_back(render(s));
    };
    auto end_phase = [&](std::string_view label) {
        ep.expert_phases.push_back(
            {std::string(label), static_cast<int>(ep.states.size()) - 1});
    };
    auto guard = [&](int start) {
        if (static_cast<int>(ep.actions.size()) - start > 200) {
            throw RuntimeFailure("expert phase failed to converge");
        }
    };

    // approach: travel at cruise height to above the target
    int phase_start = 0;
    while (std::max(std::fabs(tx - s.gx), std::fabs(ty - s.gy)) > 1e-6f) {
        apply(toward_xy(s, tx, ty));
        guard(phase_start);
    }
    end_phase("approach");

    // descend to grasp height
    phase_start = static_cast<int>(ep.actions.size());
    while (std::fabs(s.gz - kExpertGraspZ) > 1e-6f) {
        apply(Action(0, 0, step_scalar(s.gz, kExpertGraspZ), 0));
        guard(phase_start);
    }
    end_phase("descend");

    // close until the openness threshold crossing; the phase ends exactly at
    // the grasp frame so the boundary coincides with the gripper event
    while (s.gripper_open >= kOpenThreshold) {
        apply(Action(0, 0, 0, -0.1f));
    }
    end_phase("close");

    // lift back to cruise height, finishing the close concurrently
    phase_start = static_cast<int>(ep.actions.size());
    while (std::fabs(s.gz - kExpertTravelZ) > 1e-6f) {
        const float dg = s.gripper_open > 0.16f ? -0.1f : 0.0f;
        apply(Action(0, 0, step_scalar(s.gz, kExpertTravelZ), dg));
        guard(phase_start);
    }
    end_phase("lift");

    // carry to the plate center
    phase_start = static_cast<int>(ep.actions.size());
    while (std::max(std::fabs(s.plate.x - s.gx), std::fabs(s.plate.y - s.gy)) >
           1e-6f) {
        apply(toward_xy(s, s.plate.x, s.plate.y));
        guard(phase_start);
    }
    end_phase("move");

    // descend to drop height
    phase_start = static_cast<int>(ep.actions.size());
    while (std::fabs(s.gz - kExpertDropZ) > 1e-6f) {
        apply(Action(0, 0, step_scalar(s.gz, kExpertDropZ), 0));
        guard(phase_start);
    }
    end_phase("descend");

    // open until the release crossing
    while (s.gripper_open < kOpenThreshold) {
        apply(Action(0, 0, 0, 0.1f));
    }
    end_phase("open");

    // retreat along a straight line to a rest point below the plate (so the
    // placed object stays visible), finishing the open concurrently
    const float rx = s.plate.x;
    const float ry = s.plate.y - 0.18f;
    phase_start = static_cast<int>(ep.actions.size());
    while (std::max({std::fabs(rx - s.gx), std::fabs(ry - s.gy),
                     std::fabs(kExpertTravelZ - s.gz)}) > 1e-6f) {
        const float ax = rx - s.gx, ay = ry - s.gy, az = kExpertTravelZ - s.gz;
        const float m = std::max({std::fabs(ax), std::fabs(ay), std::fabs(az)});
        const float scale = m <= kExpertStep ? 1.0f : kExpertStep / m;
        const float dg = s.gripper_open < 0.74f ? 0.1f : 0.0f;
        apply(Action(ax * scale, ay * scale, az * scale, dg));
        guard(phase_start);
    }
    end_phase("retreat");

    return ep;
}

Metrics success_metrics(const Episode& episode, int target_id) {
    if (episode.states.empty()) throw ValidationError("empty episode");
    if (episode.states.front().find_object(target_id) == nullptr) {
        throw ValidationError("unknown target id " + std::to_string(target_id));
    }
    Metrics m;
    for (const auto& s : episode.states) {
        const auto* t = s.find_object(target_id);
        if (dist2(s.gx, s.gy, t->x, t->y) <= kApproachDistance &&
            s.gz <= kApproachMaxZ) {
            m.approach = 1;
            break;
        }
    }
    const auto& last = episode.states.back();
    const auto* t = last.find_object(target_id);
    if (dist2(t->x, t->y, last.plate.x, last.plate.y) <= last.plate.radius &&
        last.gripper_open >= kOpenThreshold) {
        m.success = 1;
    }
    return m;
}

}  // namespace desk::world
