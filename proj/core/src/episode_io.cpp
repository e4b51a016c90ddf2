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

#include "deskstack/episode_io.hpp"

#include <algorithm>
#include <fstream>

#include <json.hpp>

namespace desk::io {

using nlohmann::json;
using world::Episode;
using world::ScenarioDescriptor;

namespace {

double q9(float v) { return quantize9(v); }

json scenario_to_json(const ScenarioDescriptor& sc) {
    json out;
    out["kind"] = std::string(world::to_string(sc.kind));
    out["layout_id"] = sc.layout_id;
    out["tablecloth"] = sc.tablecloth;
    out["target_code"] = sc.target_code;
    out["object_codes"] = sc.object_codes;
    json pos = json::array();
    for (const auto& p : sc.positions) pos.push_back({q9(p[0]), q9(p[1])});
    out["positions"] = std::move(pos);
    out["plate"] = {q9(sc.plate.x), q9(sc.plate.y), q9(sc.plate.radius)};
    out["seed"] = sc.seed;
    return out;
}

ScenarioDescriptor scenario_from_json(const json& j) {
    ScenarioDescriptor sc;
    sc.kind = world::scenario_kind_from_string(j.at("kind").get<std::string>());
    sc.layout_id = j.at("layout_id").get<int>();
    sc.tablecloth = j.at("tablecloth").get<int>();
    sc.target_code = j.at("target_code").get<int>();
    sc.object_codes = j.at("object_codes").get<std::vector<int>>();
    for (const auto& p : j.at("positions")) {
        sc.positions.push_back({p.at(0).get<float>(), p.at(1).get<float>()});
    }
    const auto& pl = j.at("plate");
    sc.plate = {pl.at(0).get<float>(), pl.at(1).get<float>(),
                pl.at(2).get<float>()};
    sc.seed = j.at("seed").get<std::uint64_t>();
    return sc;
}

// Per-state array: gx, gy, gz, openness, step_index, then x, y, held per
// object. Object ids/codes, plate and cloth are episode constants.
json state_to_json(const world::WorldState& s) {
    json arr = json::array();
    arr.push_back(q9(s.gx));
    arr.push_back(q9(s.gy));
    arr.push_back(q9(s.gz));
    arr.push_back(q9(s.gripper_open));
    arr.push_back(s.step_index);
    for (const auto& o : s.objects) {
        arr.push_back(q9(o.x));
        arr.push_back(q9(o.y));
        arr.push_back(o.held ? 1 : 0);
    }
    return arr;
}

world::WorldState state_from_json(const json& arr, const Episode& ep) {
    world::WorldState s;
    s.gx = arr.at(0).get<float>();
    s.gy = arr.at(1).get<float>();
    s.gz = arr.at(2).get<float>();
    s.gripper_open = arr.at(3).get<float>();
    s.step_index = arr.at(4).get<int>();
    s.plate = ep.scenario.plate;
    s.tablecloth = ep.scenario.tablecloth;
    s.rng_seed = ep.seed;
    const auto& codes = ep.scenario.object_codes;
    for (std::size_t i = 0; i < codes.size(); ++i) {
        world::ObjectState o;
        o.id = static_cast<int>(i);
        o.palette_code = codes[i];
        o.x = arr.at(5 + 3 * i).get<float>();
        o.y = arr.at(6 + 3 * i).get<float>();
        o.held = arr.at(7 + 3 * i).get<int>() != 0;
        s.objects.push_back(o);
    }
    return s;
}

json plan_to_json(const milestone::MilestonePlan& plan) {
    json segs = json::array();
    for (const auto& seg : plan.segments) {
        segs.push_back({{"subtask", seg.subtask},
                        {"from", seg.from},
                        {"to", seg.to},
                        {"goal_frame", {seg.goal_frame[0], seg.goal_frame[1]}},
                        {"skill_id", seg.skill_id}});
    }
    return json{{"segments", std::move(segs)}};
}

milestone::MilestonePlan plan_from_json(const json& j,
                                        const std::string& instruction) {
    milestone::MilestonePlan plan;
    plan.instruction = instruction;
    for (const auto& s : j.at("segments")) {
        milestone::MilestoneSegment seg;
        seg.subtask = s.at("subtask").get<std::string>();
        seg.from = s.at("from").get<int>();
        seg.to = s.at("to").get<int>();
        seg.goal_frame = {s.at("goal_frame").at(0).get<int>(),
                          s.at("goal_frame").at(1).get<int>()};
        seg.skill_id = s.at("skill_id").get<int>();
        plan.segments.push_back(std::move(seg));
    }
    return plan;
}

}  // namespace

void save_episode(const std::filesystem::path& path, const Episode& episode,
                  const milestone::MilestonePlan* plan) {
    json out;
    out["instruction"] = episode.instruction;
    out["seed"] = episode.seed;
    out["scenario"] = scenario_to_json(episode.scenario);

    json states = json::array();
    for (const auto& s : episode.states) states.push_back(state_to_json(s));
    out["states"] = std::move(states);

    json actions = json::array();
    for (const auto& a : episode.actions) {
        actions.push_back({q9(a.dx), q9(a.dy), q9(a.dz), q9(a.dg)});
    }
    out["actions"] = std::move(actions);

    json rasters = json::array();
    for (const auto& pair : episode.rasters) {
        json views = json::array();
        for (const auto& r : pair) {
            json cells = json::array();
            for (auto c : r.grid) cells.push_back(static_cast<int>(c));
            views.push_back(std::move(cells));
        }
        rasters.push_back(std::move(views));
    }
    out["rasters"] = std::move(rasters);

    if (!episode.expert_phases.empty()) {
        json phases = json::array();
        for (const auto& p : episode.expert_phases) {
            phases.push_back({{"label", p.label}, {"end_frame", p.end_frame}});
        }
        out["expert_phases"] = std::move(phases);
    }
    if (plan != nullptr) out["milestones"] = plan_to_json(*plan);

    std::ofstream f(path);
    if (!f) {
        throw RuntimeFailure("cannot open " + path.string() + " for writing");
    }
    f << out.dump() << '\n';
}

LabeledEpisode load_episode(const std::filesystem::path& path) {
    std::ifstream f(path);
    if (!f) throw ValidationError("cannot open episode file " + path.string());
    json j;
    try {
        f >> j;
    } catch (const json::exception& e) {
        throw ValidationError("malformed episode JSON in " + path.string() +
                              ": " + e.what());
    }

    LabeledEpisode out;
    Episode& ep = out.episode;
    ep.instruction = j.at("instruction").get<std::string>();
    ep.seed = j.at("seed").get<std::uint64_t>();
    ep.scenario = scenario_from_json(j.at("scenario"));
    for (const auto& s : j.at("states")) {
        ep.states.push_back(state_from_json(s, ep));
    }
    for (const auto& a : j.at("actions")) {
        ep.actions.push_back(world::Action(
            a.at(0).get<float>(), a.at(1).get<float>(), a.at(2).get<float>(),
            a.at(3).get<float>()));
    }
    for (const auto& pair : j.at("rasters")) {
        std::array<world::Raster, 2> views;
        for (int v = 0; v < 2; ++v) {
            views[static_cast<std::size_t>(v)].view_id = v;
            const auto& cells = pair.at(v);
            for (int c = 0; c < world::kCells; ++c) {
                views[static_cast<std::size_t>(v)]
                    .grid[static_cast<std::size_t>(c)] =
                    static_cast<std::uint8_t>(cells.at(c).get<int>());
            }
        }
        ep.rasters.push_back(views);
    }
    if (j.contains("expert_phases")) {
        for (const auto& p : j.at("expert_phases")) {
            ep.expert_phases.push_back({p.at("label").get<std::string>(),
                                        p.at("end_frame").get<int>()});
        }
    }
    if (ep.actions.size() + 1 != ep.states.size() ||
        ep.rasters.size() != ep.states.size()) {
        throw ValidationError("inconsistent episode lengths in " +
                              path.string());
    }
    if (j.contains("milestones")) {
        out.plan = plan_from_json(j.at("milestones"), ep.instruction);
        out.plan->validate(ep.length());
    }
    return out;
}

std::vector<std::filesystem::path> list_episode_files(
    const std::filesystem::path& dir) {
    if (!std::filesystem::is_directory(dir)) {
        throw ValidationError("not a directory: " + dir.string());
    }
    std::vector<std::filesystem::path> files;
    for (const auto& entry : std::filesystem::directory_iterator(dir)) {
        if (entry.is_regular_file() && entry.path().extension() == ".json") {
            files.push_back(entry.path());
        }
    }
    std::sort(files.begin(), files.end());
    return files;
}

}  // namespace desk::io
