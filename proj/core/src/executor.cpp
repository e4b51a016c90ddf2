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

#include "deskstack/executor.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <future>
#include <map>
#include <sstream>

#include <json.hpp>

namespace desk::exec {

using planner::PlanStep;
using policy::ActionChunk;
using policy::Conditioning;
using world::WorldState;

bool aligned(const std::array<world::Raster, 2>& obs,
             const std::array<world::Raster, 2>& goal, double threshold) {
    int mismatched = 0;
    for (int v = 0; v < 2; ++v) {
        const auto& a = obs[static_cast<std::size_t>(v)].grid;
        const auto& b = goal[static_cast<std::size_t>(v)].grid;
        for (int c = 0; c < world::kCells; ++c) {
            if (a[static_cast<std::size_t>(c)] != b[static_cast<std::size_t>(c)]) {
                ++mismatched;
            }
        }
    }
    const double fraction =
        static_cast<double>(mismatched) / (2.0 * world::kCells);
    return fraction <= threshold;
}

FlowChunkPolicy::FlowChunkPolicy(policy::FlowPolicy policy, int flow_steps)
    : policy_(std::move(policy)),
      flow_steps_(flow_steps),
      name_(policy_.use_goal() ? "flow" : "flow-nogoal") {}

ActionChunk FlowChunkPolicy::propose(const WorldState&,
                                     const Conditioning& cond, Rng& rng) {
    if (!policy_.use_goal()) {
        Conditioning blind = cond;
        blind.goal.fill(0.0f);
        return policy::sample_chunk(policy_, blind, flow_steps_, rng);
    }
    return policy::sample_chunk(policy_, cond, flow_steps_, rng);
}

namespace {

constexpr float kCruiseZ = 0.5f;
constexpr float kGraspZ = 0.05f;
constexpr float kDropZ = 0.15f;
constexpr float kRuleStep = 0.08f;

world::Action rule_toward(float rx, float ry, float rz, float dg) {
    const float m = std::max({std::fabs(rx), std::fabs(ry), std::fabs(rz)});
    if (m <= kRuleStep) return world::Action(rx, ry, rz, dg);
    const float s = kRuleStep / m;
    return world::Action(rx * s, ry * s, rz * s, dg);
}

// One step of the scripted pick-and-place rules from an arbitrary state.
world::Action expert_rule_action(const WorldState& s, int target_id) {
    const auto* target = s.find_object(target_id);
    if (target == nullptr) return {};
    bool held_any = false;
    for (const auto& o : s.objects) held_any = held_any || o.held;

    const float dxp = s.plate.x - s.gx, dyp = s.plate.y - s.gy;
    const float dxt = target->x - s.gx, dyt = target->y - s.gy;
    const float dt2 = std::sqrt(dxt * dxt + dyt * dyt);
    const float dplate = std::sqrt(
        (target->x - s.plate.x) * (target->x - s.plate.x) +
        (target->y - s.plate.y) * (target->y - s.plate.y));

    if (held_any) {
        const bool at_plate =
            std::max(std::fabs(dxp), std::fabs(dyp)) <= 1e-6f;
        if (!at_plate && s.gz < kCruiseZ - 1e-6f) {
            const float dg = s.gripper_open > 0.16f ? -0.1f : 0.0f;
            return rule_toward(0, 0, std::min(kRuleStep, kCruiseZ - s.gz), dg);
        }
        if (!at_plate) return rule_toward(dxp, dyp, 0, 0);
        if (s.gz > kDropZ + 1e-6f) {
            return rule_toward(0, 0, -std::min(kRuleStep, s.gz - kDropZ), 0);
        }
        return world::Action(0, 0, 0, 0.1f);  // release
    }

    const bool done = dplate <= s.plate.radius &&
                      s.gripper_open >= world::kOpenThreshold;
    if (done) {
        // retreat to the rest point below the plate, mirroring the expert
        const float rx = s.plate.x - s.gx;
        const float ry = (s.plate.y - 0.18f) - s.gy;
        const float rz = kCruiseZ - s.gz;
        if (std::max({std::fabs(rx), std::fabs(ry), std::fabs(rz)}) > 1e-6f) {
            const float dg = s.gripper_open < 0.74f ? 0.1f : 0.0f;
            return rule_toward(rx, ry, rz, dg);
        }
        if (s.gripper_open < 0.74f) return world::Action(0, 0, 0, 0.1f);
        return {};
    }

    if (std::max(std::fabs(dxt), std::fabs(dyt)) > 1e-6f) {
        if (s.gz < kCruiseZ - 1e-6f && dt2 > 0.1f) {
            return rule_toward(0, 0, std::min(kRuleStep, kCruiseZ - s.gz), 0);
        }
        return rule_toward(dxt, dyt, 0, 0);
    }
    if (s.gz > kGraspZ + 1e-6f) {
        return rule_toward(0, 0, -std::min(kRuleStep, s.gz - kGraspZ), 0);
    }
    if (s.gripper_open >= world::kOpenThreshold) {
        return world::Action(0, 0, 0, -0.1f);  // close
    }
    return world::Action(0, 0, 0, -0.1f);
}

}  // namespace

ActionChunk ExpertChunkPolicy::propose(const WorldState& state,
                                       const Conditioning& cond, Rng&) {
    // The oracle is privileged: it recovers the target object by matching
    // the subtask text against the object names on the table.
    const std::string text = codec::detokenize_text(
        codec::VocabLayout::standard(), cond.subtask_tokens);
    int target_id = -1;
    for (const auto& obj : state.objects) {
        const std::string name(world::object_name(obj.palette_code));
        if (text.find(" " + name) != std::string::npos ||
            text.rfind(name, 0) == 0) {
            target_id = obj.id;
            break;
        }
    }
    ActionChunk chunk;
    if (target_id < 0) return chunk;
    WorldState s = state;
    for (int k = 0; k < policy::kChunkLen; ++k) {
        const auto a = expert_rule_action(s, target_id);
        chunk.at(k, 0) = a.dx;
        chunk.at(k, 1) = a.dy;
        chunk.at(k, 2) = a.dz;
        chunk.at(k, 3) = a.dg;
        s = world::step(s, a);
    }
    return chunk;
}

std::string_view to_string(StageOutcome o) {
    switch (o) {
        case StageOutcome::kCompleted: return "aligned";
        case StageOutcome::kStopped: return "stopped";
        case StageOutcome::kTimeout: return "timeout";
        case StageOutcome::kFailed: return "failed";
    }
    return "unknown";
}

void RolloutLog::write_jsonl(const std::filesystem::path& path) const {
    std::ofstream f(path);
    if (!f) throw RuntimeFailure("cannot open " + path.string());
    for (const auto& rec : records) {
        nlohmann::json j;
        j["t"] = rec.t;
        j["stage"] = rec.stage;
        j["pose"] = {quantize9(rec.pose[0]), quantize9(rec.pose[1]),
                     quantize9(rec.pose[2]), quantize9(rec.pose[3])};
        if (rec.action.has_value()) {
            const auto& a = *rec.action;
            j["action"] = {quantize9(a[0]), quantize9(a[1]), quantize9(a[2]),
                           quantize9(a[3])};
        }
        if (!rec.switch_event.empty()) j["switch_event"] = rec.switch_event;
        f << j.dump() << '\n';
    }
}

namespace {

LogRecord make_record(int t, int stage, const WorldState& s) {
    LogRecord r;
    r.t = t;
    r.stage = stage;
    r.pose = {s.gx, s.gy, s.gz, s.gripper_open};
    return r;
}

Conditioning make_conditioning(const WorldState& s,
                               const std::array<world::Raster, 2>& obs,
                               const PlanStep& step) {
    Conditioning cond;
    policy::raster_features(obs, cond.obs);
    policy::raster_features(step.goal, cond.goal);
    cond.subtask_tokens =
        codec::tokenize_text(codec::VocabLayout::standard(), step.subtask);
    cond.proprio = {s.gx, s.gy, s.gz, s.gripper_open};
    return cond;
}

}  // namespace

StageResult run_stage(WorldState& state, ChunkPolicy& policy,
                      const PlanStep& step, const ExecutorConfig& cfg,
                      Rng& rng, RolloutLog& log, int* clock,
                      std::vector<WorldState>* trace) {
    StageResult res;
    auto switch_record = [&](std::string_view event) {
        auto rec = make_record(*clock, step.stage_index, state);
        rec.switch_event = std::string(event);
        log.records.push_back(std::move(rec));
    };

    while (true) {
        const auto obs = world::render(state);
        if (cfg.align_detection &&
            aligned(obs, step.goal, cfg.align_threshold)) {
            res.outcome = StageOutcome::kCompleted;
            switch_record(to_string(res.outcome));
            return res;
        }
        if (res.steps_used >= cfg.stage_budget) {
            res.outcome = StageOutcome::kTimeout;
            switch_record(to_string(res.outcome));
            return res;
        }

        const auto cond = make_conditioning(state, obs, step);
        const auto chunk = policy.propose(state, cond, rng);
        if (cfg.stop_detection && chunk.mean_abs() < cfg.stop_threshold) {
            res.outcome = StageOutcome::kStopped;
            switch_record(to_string(res.outcome));
            return res;
        }

        auto apply = [&](const world::Action& a) {
            state = world::step(state, a);
            auto rec = make_record(*clock, step.stage_index, state);
            rec.action = a.values();
            log.records.push_back(std::move(rec));
            if (trace != nullptr) trace->push_back(state);
            ++res.steps_used;
            ++*clock;
        };

        try {
            if (cfg.mode == ControlMode::kDelta) {
                for (int k = 0; k < cfg.execute_steps; ++k) {
                    if (res.steps_used >= cfg.stage_budget) break;
                    apply(world::Action(chunk.at(k, 0), chunk.at(k, 1),
                                        chunk.at(k, 2), chunk.at(k, 3)));
                }
            } else {
                // Waypoints are chunk-start proprioception plus cumulative
                // deltas at the configured offsets.
                const std::array<double, 4> pose0 = {state.gx, state.gy,
                                                     state.gz,
                                                     state.gripper_open};
                std::array<double, 4> cum{};
                int done_offset = 0;
                for (int offset : cfg.waypoint_offsets) {
                    for (int k = done_offset; k < offset; ++k) {
                        for (int d = 0; d < 4; ++d) {
                            cum[static_cast<std::size_t>(d)] +=
                                static_cast<double>(chunk.at(k, d));
                        }
                    }
                    done_offset = offset;
                    const std::array<double, 4> wp = {
                        pose0[0] + cum[0], pose0[1] + cum[1],
                        pose0[2] + cum[2], pose0[3] + cum[3]};
                    constexpr int kLegSteps = 5;
                    const std::array<double, 4> now = {state.gx, state.gy,
                                                       state.gz,
                                                       state.gripper_open};
                    std::array<float, 4> delta;
                    for (int d = 0; d < 4; ++d) {
                        const double raw =
                            (wp[static_cast<std::size_t>(d)] -
                             now[static_cast<std::size_t>(d)]) /
                            kLegSteps;
                        delta[static_cast<std::size_t>(d)] = static_cast<float>(
                            std::clamp(raw, -0.1, 0.1));
                    }
                    for (int j = 0; j < kLegSteps; ++j) {
                        if (res.steps_used >= cfg.stage_budget) break;
                        apply(world::Action(delta[0], delta[1], delta[2],
                                            delta[3]));
                    }
                }
            }
        } catch (const ValidationError&) {
            res.outcome = StageOutcome::kFailed;
            switch_record("action-bounds");
            return res;
        }
    }
}

std::vector<PlanStep> plan_steps_from_ground_truth(
    const world::Episode& episode, const milestone::MilestonePlan& plan) {
    std::vector<PlanStep> steps;
    for (std::size_t i = 0; i < plan.segments.size(); ++i) {
        const auto& seg = plan.segments[i];
        PlanStep step;
        step.stage_index = static_cast<int>(i);
        step.subtask = seg.subtask;
        step.goal = {
            episode.rasters[static_cast<std::size_t>(seg.goal_frame[0])][0],
            episode.rasters[static_cast<std::size_t>(seg.goal_frame[1])][1]};
        steps.push_back(std::move(step));
    }
    return steps;
}

TaskResult run_task(const world::ScenarioDescriptor& scenario,
                    std::uint64_t seed, const PlannerHandle& planner,
                    ChunkPolicy& policy, const ExecutorConfig& cfg) {
    TaskResult res;
    WorldState state = world::initial_state(scenario, seed);
    std::vector<WorldState> trace{state};
    Rng rng(mix_seed(seed, 0xE8ECull));
    const int target_id = scenario.target_id();

    auto finish = [&] {
        world::Episode ep;
        ep.instruction = scenario.instruction();
        ep.seed = seed;
        ep.scenario = scenario;
        ep.states = trace;
        res.metrics = world::success_metrics(ep, target_id);
        return res;
    };

    std::vector<PlanStep> steps;
    if (planner.source == PlanSource::kGroundTruth) {
        const auto expert = world::scripted_expert(scenario, seed);
        milestone::RuleAnnotator annotator;
        const auto plan = milestone::label_episode(expert, annotator);
        steps = plan_steps_from_ground_truth(expert, plan);
    } else {
        if (planner.model == nullptr) {
            throw ValidationError("world-model plan source without a model");
        }
        try {
            const auto prefix = codec::make_plan_prefix(
                world::render(state), scenario.instruction());
            const auto seq =
                planner::beam_search(*planner.model, prefix, planner.beam);
            steps = planner::decode_plan(seq, 0);
        } catch (const std::exception&) {
            res.failure_reason = "plan-failed";
            return finish();
        }
    }

    if (steps.empty()) {
        res.failure_reason = "empty-plan";
        return finish();
    }

    int clock = 0;
    std::size_t stage_idx = 0;
    int executed_stages = 0;
    while (stage_idx < steps.size()) {
        const auto sr = run_stage(state, policy, steps[stage_idx], cfg, rng,
                                  res.log, &clock, &trace);
        res.stage_outcomes.push_back(sr.outcome);
        if (sr.outcome == StageOutcome::kTimeout ||
            sr.outcome == StageOutcome::kFailed) {
            res.failure_reason = std::string(to_string(sr.outcome));
            return finish();
        }
        ++executed_stages;
        ++stage_idx;

        if (planner.source == PlanSource::kWorldModel && cfg.replan &&
            stage_idx < steps.size()) {
            if (executed_stages >= codec::kMaxImagesPerSequence) break;
            try {
                const auto prefix = codec::make_plan_prefix(
                    world::render(state), scenario.instruction());
                const auto seq =
                    planner::beam_search(*planner.model, prefix, planner.beam);
                auto fresh = planner::decode_plan(seq, 0);
                if (fresh.empty()) break;  // planner reports task finished
                for (auto& st : fresh) {
                    st.stage_index += static_cast<int>(stage_idx);
                }
                steps.resize(stage_idx);
                steps.insert(steps.end(), fresh.begin(), fresh.end());
            } catch (const std::exception&) {
                res.failure_reason = "plan-failed";
                return finish();
            }
        }
    }
    return finish();
}

std::vector<EvalRow> evaluate(std::span<const EvalPolicy> policies,
                              std::span<const EvalSet> sets,
                              const PlannerHandle& planner,
                              const EvalConfig& cfg) {
    if (policies.empty() || sets.empty()) {
        throw ValidationError("evaluate needs at least one policy and one set");
    }
    struct Task {
        std::size_t policy, set, scenario;
        int rollout;
    };
    std::vector<Task> tasks;
    for (std::size_t p = 0; p < policies.size(); ++p) {
        for (std::size_t s = 0; s < sets.size(); ++s) {
            for (std::size_t i = 0; i < sets[s].scenarios.size(); ++i) {
                for (int r = 0; r < cfg.rollouts; ++r) {
                    tasks.push_back({p, s, i, r});
                }
            }
        }
    }

    std::vector<world::Metrics> outcomes(tasks.size());
    auto run_range = [&](std::size_t begin, std::size_t stride) {
        for (std::size_t k = begin; k < tasks.size(); k += stride) {
            const auto& t = tasks[k];
            const auto& scenario = sets[t.set].scenarios[t.scenario];
            const auto seed = mix_seed(cfg.master_seed, scenario.seed,
                                       static_cast<std::uint64_t>(t.rollout));
            outcomes[k] = run_task(scenario, seed, planner,
                                   *policies[t.policy].policy, cfg.exec)
                              .metrics;
        }
    };
    if (cfg.jobs > 1) {
        std::vector<std::future<void>> futures;
        const auto jobs = static_cast<std::size_t>(cfg.jobs);
        for (std::size_t j = 0; j < jobs; ++j) {
            futures.push_back(
                std::async(std::launch::async, run_range, j, jobs));
        }
        for (auto& f : futures) f.get();
    } else {
        run_range(0, 1);
    }

    // Aggregate counts keyed by (policy, set, category, cloth); the sum is
    // order-independent.
    struct Key {
        std::string policy, set, category;
        int cloth;
        bool operator<(const Key& o) const {
            return std::tie(policy, set, category, cloth) <
                   std::tie(o.policy, o.set, o.category, o.cloth);
        }
    };
    struct Acc {
        double approach = 0.0, success = 0.0;
        int n = 0;
    };
    std::map<Key, Acc> groups;
    for (std::size_t k = 0; k < tasks.size(); ++k) {
        const auto& t = tasks[k];
        const auto& scenario = sets[t.set].scenarios[t.scenario];
        const std::string cat(world::object_category(scenario.target_code));
        const Key detail{policies[t.policy].name, sets[t.set].name, cat,
                         scenario.tablecloth};
        const Key total{policies[t.policy].name, sets[t.set].name, "all", 0};
        for (const auto& key : {total, detail}) {
            auto& acc = groups[key];
            acc.approach += outcomes[k].approach;
            acc.success += outcomes[k].success;
            acc.n += 1;
        }
    }

    std::vector<EvalRow> rows;
    for (const auto& [key, acc] : groups) {
        rows.push_back({key.policy, key.set, key.category, key.cloth,
                        acc.approach / acc.n, acc.success / acc.n, acc.n});
    }
    return rows;
}

void write_metrics_csv(const std::filesystem::path& path,
                       std::span<const EvalRow> rows) {
    std::ofstream f(path);
    if (!f) throw RuntimeFailure("cannot open " + path.string());
    f << "policy,set,category,tablecloth,approach,success,n\n";
    char buf[64];
    for (const auto& r : rows) {
        std::snprintf(buf, sizeof buf, "%.6f,%.6f", r.approach, r.success);
        f << r.policy << ',' << r.set << ',' << r.category << ','
          << r.tablecloth << ',' << buf << ',' << r.n << '\n';
    }
}

std::string format_metrics_table(std::span<const EvalRow> rows) {
    std::ostringstream os;
    char line[160];
    std::snprintf(line, sizeof line, "%-14s %-18s %-10s %5s %9s %9s %5s",
                  "policy", "set", "category", "cloth", "approach", "success",
                  "n");
    os << line << '\n';
    for (const auto& r : rows) {
        std::snprintf(line, sizeof line, "%-14s %-18s %-10s %5d %9.3f %9.3f %5d",
                      r.policy.c_str(), r.set.c_str(), r.category.c_str(),
                      r.tablecloth, r.approach, r.success, r.n);
        os << line << '\n';
    }
    return os.str();
}

}  // namespace desk::exec
