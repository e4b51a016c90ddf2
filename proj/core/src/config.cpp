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

#include "deskstack/config.hpp"

#include <fstream>
#include <set>

#include <json.hpp>

namespace desk::config {

using nlohmann::json;

namespace {

void check_keys(const json& j, const std::set<std::string>& known,
                const std::string& prefix) {
    if (!j.is_object()) {
        throw ValidationError("config section " +
                              (prefix.empty() ? "root" : prefix) +
                              " must be a JSON object");
    }
    for (const auto& [key, value] : j.items()) {
        if (known.find(key) == known.end()) {
            throw ValidationError("unknown config key: " + prefix + key);
        }
    }
}

template <typename T>
void read_if(const json& j, const char* key, T& out) {
    if (j.contains(key)) out = j.at(key).get<T>();
}

}  // namespace

RunConfig RunConfig::from_json_text(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw ValidationError(std::string("malformed config JSON: ") +
                              e.what());
    }

    RunConfig cfg;
    check_keys(j, {"master_seed", "out_dir", "jobs", "world", "milestone",
                   "codec", "planner", "policy", "executor"},
               "");
    read_if(j, "master_seed", cfg.master_seed);
    read_if(j, "out_dir", cfg.out_dir);
    read_if(j, "jobs", cfg.jobs);

    if (j.contains("world")) {
        const auto& s = j.at("world");
        check_keys(s, {"kind", "episodes"}, "world.");
        read_if(s, "kind", cfg.world.kind);
        read_if(s, "episodes", cfg.world.episodes);
    }
    if (j.contains("milestone")) {
        const auto& s = j.at("milestone");
        check_keys(s,
                   {"epsilon", "merge_window", "annotator", "endpoint",
                    "timeout_seconds", "retries", "backoff_seconds"},
                   "milestone.");
        read_if(s, "epsilon", cfg.milestone.epsilon);
        read_if(s, "merge_window", cfg.milestone.merge_window);
        read_if(s, "annotator", cfg.milestone.annotator);
        read_if(s, "endpoint", cfg.milestone.endpoint);
        read_if(s, "timeout_seconds", cfg.milestone.timeout_seconds);
        read_if(s, "retries", cfg.milestone.retries);
        read_if(s, "backoff_seconds", cfg.milestone.backoff_seconds);
    }
    if (j.contains("codec")) {
        const auto& s = j.at("codec");
        check_keys(s, {"windows_per_episode"}, "codec.");
        read_if(s, "windows_per_episode", cfg.codec.windows_per_episode);
    }
    if (j.contains("planner")) {
        const auto& s = j.at("planner");
        check_keys(s,
                   {"model", "order", "alpha", "steps", "lr", "batch",
                    "momentum", "beam_width", "max_new_tokens"},
                   "planner.");
        read_if(s, "model", cfg.planner.model);
        read_if(s, "order", cfg.planner.order);
        read_if(s, "alpha", cfg.planner.alpha);
        read_if(s, "steps", cfg.planner.steps);
        read_if(s, "lr", cfg.planner.lr);
        read_if(s, "batch", cfg.planner.batch);
        read_if(s, "momentum", cfg.planner.momentum);
        read_if(s, "beam_width", cfg.planner.beam_width);
        read_if(s, "max_new_tokens", cfg.planner.max_new_tokens);
    }
    if (j.contains("policy")) {
        const auto& s = j.at("policy");
        check_keys(s, {"window", "flow_steps", "steps", "lr", "batch",
                       "momentum"},
                   "policy.");
        read_if(s, "window", cfg.policy.window);
        read_if(s, "flow_steps", cfg.policy.flow_steps);
        read_if(s, "steps", cfg.policy.steps);
        read_if(s, "lr", cfg.policy.lr);
        read_if(s, "batch", cfg.policy.batch);
        read_if(s, "momentum", cfg.policy.momentum);
    }
    if (j.contains("executor")) {
        const auto& s = j.at("executor");
        check_keys(s,
                   {"execute_steps", "waypoint_offsets", "control_mode",
                    "align_threshold", "stop_threshold", "stage_budget",
                    "plan_source", "replan", "rollouts", "eval_in_domain",
                    "eval_unseen_distractor", "eval_unseen_target",
                    "eval_novel"},
                   "executor.");
        read_if(s, "execute_steps", cfg.executor.execute_steps);
        read_if(s, "waypoint_offsets", cfg.executor.waypoint_offsets);
        read_if(s, "control_mode", cfg.executor.control_mode);
        read_if(s, "align_threshold", cfg.executor.align_threshold);
        read_if(s, "stop_threshold", cfg.executor.stop_threshold);
        read_if(s, "stage_budget", cfg.executor.stage_budget);
        read_if(s, "plan_source", cfg.executor.plan_source);
        read_if(s, "replan", cfg.executor.replan);
        read_if(s, "rollouts", cfg.executor.rollouts);
        read_if(s, "eval_in_domain", cfg.executor.eval_in_domain);
        read_if(s, "eval_unseen_distractor",
                cfg.executor.eval_unseen_distractor);
        read_if(s, "eval_unseen_target", cfg.executor.eval_unseen_target);
        read_if(s, "eval_novel", cfg.executor.eval_novel);
    }

    if (cfg.jobs < 1) throw ValidationError("jobs must be >= 1");
    if (cfg.executor.execute_steps < 1 ||
        cfg.executor.execute_steps > policy::kChunkLen) {
        throw ValidationError("executor.execute_steps must be in 1..30");
    }
    for (int o : cfg.executor.waypoint_offsets) {
        if (o < 1 || o > cfg.executor.execute_steps) {
            throw ValidationError(
                "waypoint offsets must be within executor.execute_steps");
        }
    }
    return cfg;
}

RunConfig RunConfig::from_file(const std::filesystem::path& path) {
    std::ifstream f(path);
    if (!f) throw ValidationError("cannot open config file " + path.string());
    std::string text((std::istreambuf_iterator<char>(f)),
                     std::istreambuf_iterator<char>());
    return from_json_text(text);
}

std::string RunConfig::to_json_text() const {
    json j;
    j["master_seed"] = master_seed;
    j["out_dir"] = out_dir;
    j["jobs"] = jobs;
    j["world"] = {{"kind", world.kind}, {"episodes", world.episodes}};
    j["milestone"] = {{"epsilon", milestone.epsilon},
                      {"merge_window", milestone.merge_window},
                      {"annotator", milestone.annotator},
                      {"endpoint", milestone.endpoint},
                      {"timeout_seconds", milestone.timeout_seconds},
                      {"retries", milestone.retries},
                      {"backoff_seconds", milestone.backoff_seconds}};
    j["codec"] = {{"windows_per_episode", codec.windows_per_episode}};
    j["planner"] = {{"model", planner.model},
                    {"order", planner.order},
                    {"alpha", planner.alpha},
                    {"steps", planner.steps},
                    {"lr", planner.lr},
                    {"batch", planner.batch},
                    {"momentum", planner.momentum},
                    {"beam_width", planner.beam_width},
                    {"max_new_tokens", planner.max_new_tokens}};
    j["policy"] = {{"window", policy.window},
                   {"flow_steps", policy.flow_steps},
                   {"steps", policy.steps},
                   {"lr", policy.lr},
                   {"batch", policy.batch},
                   {"momentum", policy.momentum}};
    j["executor"] = {{"execute_steps", executor.execute_steps},
                     {"waypoint_offsets", executor.waypoint_offsets},
                     {"control_mode", executor.control_mode},
                     {"align_threshold", executor.align_threshold},
                     {"stop_threshold", executor.stop_threshold},
                     {"stage_budget", executor.stage_budget},
                     {"plan_source", executor.plan_source},
                     {"replan", executor.replan},
                     {"rollouts", executor.rollouts},
                     {"eval_in_domain", executor.eval_in_domain},
                     {"eval_unseen_distractor", executor.eval_unseen_distractor},
                     {"eval_unseen_target", executor.eval_unseen_target},
                     {"eval_novel", executor.eval_novel}};
    return j.dump(2);
}

void RunConfig::write_resolved(const std::filesystem::path& dir) const {
    std::filesystem::create_directories(dir);
    std::ofstream f(dir / "resolved_config.json");
    if (!f) {
        throw RuntimeFailure("cannot write resolved config in " + dir.string());
    }
    f << to_json_text() << '\n';
}

std::string RunConfig::describe_keys() {
    return RunConfig().to_json_text();
}

milestone::MilestoneConfig RunConfig::milestone_config() const {
    return {milestone.epsilon, milestone.merge_window};
}

milestone::RemoteConfig RunConfig::remote_config() const {
    return {milestone.endpoint, milestone.timeout_seconds, milestone.retries,
            milestone.backoff_seconds};
}

exec::ExecutorConfig RunConfig::exec_config() const {
    exec::ExecutorConfig cfg;
    cfg.execute_steps = executor.execute_steps;
    if (executor.waypoint_offsets.size() == 2) {
        cfg.waypoint_offsets = {executor.waypoint_offsets[0],
                                executor.waypoint_offsets[1]};
    }
    if (executor.control_mode == "delta") {
        cfg.mode = exec::ControlMode::kDelta;
    } else if (executor.control_mode == "waypoint") {
        cfg.mode = exec::ControlMode::kWaypoint;
    } else {
        throw ValidationError("unknown control mode: " + executor.control_mode);
    }
    cfg.align_threshold = executor.align_threshold;
    cfg.stop_threshold = executor.stop_threshold;
    cfg.stage_budget = executor.stage_budget;
    if (executor.plan_source == "ground-truth") {
        cfg.plan_source = exec::PlanSource::kGroundTruth;
    } else if (executor.plan_source == "world-model") {
        cfg.plan_source = exec::PlanSource::kWorldModel;
    } else {
        throw ValidationError("unknown plan source: " + executor.plan_source);
    }
    cfg.replan = executor.replan;
    cfg.flow_steps = policy.flow_steps;
    return cfg;
}

planner::TrainConfig RunConfig::planner_train_config() const {
    return {planner.steps, planner.lr, planner.batch, master_seed,
            planner.momentum};
}

policy::PolicyTrainConfig RunConfig::policy_train_config() const {
    return {policy.steps, policy.lr, policy.batch, master_seed,
            policy.momentum};
}

policy::DatasetConfig RunConfig::dataset_config(bool zero_goal) const {
    return {policy.window, master_seed, zero_goal, jobs};
}

}  // namespace desk::config
