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

#ifndef DESKSTACK_CONFIG_HPP
#define DESKSTACK_CONFIG_HPP

#include <filesystem>
#include <string>
#include <vector>

#include "deskstack/annotator_remote.hpp"
#include "deskstack/executor.hpp"

namespace desk::config {

// Resolved run configuration. Unknown keys in the input are rejected; every
// run writes the fully-resolved document next to its outputs.
struct RunConfig {
    std::uint64_t master_seed = 0;
    std::string out_dir = "out";
    int jobs = 1;

    struct World {
        std::string kind = "in_domain";
        int episodes = 10;
    } world;

    struct Milestone {
        double epsilon = 0.02;
        int merge_window = 3;
        std::string annotator = "rule";  // rule | remote
        std::string endpoint;
        double timeout_seconds = 30.0;
        int retries = 3;
        double backoff_seconds = 1.0;
    } milestone;

    struct Codec {
        int windows_per_episode = 4;
    } codec;

    struct Planner {
        std::string model = "count";  // count | mlp
        int order = 0;                // n-gram order; 0 = full history
        double alpha = 0.0;
        int steps = 2000;
        double lr = 0.1;
        int batch = 64;
        double momentum = 0.9;
        int beam_width = 4;
        int max_new_tokens = 16384;
    } planner;

    struct Policy {
        int window = 5;
        int flow_steps = 10;
        int steps = 4000;
        double lr = 0.02;
        int batch = 64;
        double momentum = 0.9;
    } policy;

    struct Executor {
        int execute_steps = 10;
        std::vector<int> waypoint_offsets{5, 10};
        std::string control_mode = "delta";      // delta | waypoint
        double align_threshold = 0.03;
        double stop_threshold = 0.005;
        int stage_budget = 200;
        std::string plan_source = "ground-truth";  // ground-truth | world-model
        bool replan = false;
        int rollouts = 3;
        int eval_in_domain = 15;
        int eval_unseen_distractor = 15;
        int eval_unseen_target = 15;
        int eval_novel = 63;
    } executor;

    static RunConfig defaults() { return {}; }
    static RunConfig from_file(const std::filesystem::path& path);
    static RunConfig from_json_text(const std::string& text);
    std::string to_json_text() const;
    void write_resolved(const std::filesystem::path& dir) const;

    // Documented key list for --help.
    static std::string describe_keys();

    milestone::MilestoneConfig milestone_config() const;
    milestone::RemoteConfig remote_config() const;
    exec::ExecutorConfig exec_config() const;
    planner::TrainConfig planner_train_config() const;
    policy::PolicyTrainConfig policy_train_config() const;
    policy::DatasetConfig dataset_config(bool zero_goal) const;
};

}  // namespace desk::config

#endif  // DESKSTACK_CONFIG_HPP
