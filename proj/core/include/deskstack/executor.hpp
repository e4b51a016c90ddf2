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

#ifndef DESKSTACK_EXECUTOR_HPP
#define DESKSTACK_EXECUTOR_HPP

#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "deskstack/planner.hpp"
#include "deskstack/policy.hpp"

namespace desk::exec {

enum class ControlMode { kDelta, kWaypoint };
enum class PlanSource { kGroundTruth, kWorldModel };

struct ExecutorConfig {
    int execute_steps = 10;  // of the 30-step chunk
    std::array<int, 2> waypoint_offsets{5, 10};
    ControlMode mode = ControlMode::kDelta;
    double align_threshold = 0.03;  // mismatched-cell fraction over both views
    double stop_threshold = 0.005;  // mean |action| of a stopping chunk
    int stage_budget = 200;         // simulator steps per stage
    PlanSource plan_source = PlanSource::kGroundTruth;
    bool replan = false;  // re-query the world model after each stage
    int flow_steps = 10;
    // The two completion detectors are individually toggleable.
    bool align_detection = true;
    bool stop_detection = true;
};

// Fraction of mismatched raster cells across both views.
bool aligned(const std::array<world::Raster, 2>& obs,
             const std::array<world::Raster, 2>& goal, double threshold);

// Action-chunk proposal interface for the low-level controller. The world
// state is provided for privileged oracle policies; learned policies must
// only read the conditioning.
class ChunkPolicy {
  public:
    virtual ~ChunkPolicy() = default;
    virtual policy::ActionChunk propose(const world::WorldState& state,
                                        const policy::Conditioning& cond,
                                        Rng& rng) = 0;
    virtual std::string_view name() const = 0;
};

class FlowChunkPolicy : public ChunkPolicy {
  public:
    FlowChunkPolicy(policy::FlowPolicy policy, int flow_steps = 10);
    policy::ActionChunk propose(const world::WorldState& state,
                                const policy::Conditioning& cond,
                                Rng& rng) override;
    std::string_view name() const override { return name_; }

  private:
    policy::FlowPolicy policy_;
    int flow_steps_;
    std::string name_;
};

// Privileged scripted controller; rolls the expert rules forward to fill a
// coherent 30-step chunk, emitting zeros once the task is done.
class ExpertChunkPolicy : public ChunkPolicy {
  public:
    policy::ActionChunk propose(const world::WorldState& state,
                                const policy::Conditioning& cond,
                                Rng& rng) override;
    std::string_view name() const override { return "expert"; }
};

class ZeroChunkPolicy : public ChunkPolicy {
  public:
    policy::ActionChunk propose(const world::WorldState&,
                                const policy::Conditioning&, Rng&) override {
        return {};
    }
    std::string_view name() const override { return "zero"; }
};

enum class StageOutcome { kCompleted, kStopped, kTimeout, kFailed };
std::string_view to_string(StageOutcome o);

struct LogRecord {
    int t = 0;
    int stage = 0;
    std::array<float, 4> pose{};  // x, y, z, openness
    std::optional<std::array<float, 4>> action;
    std::string switch_event;  // empty for plain control steps
};

struct RolloutLog {
    std::vector<LogRecord> records;
    void write_jsonl(const std::filesystem::path& path) const;
};

struct PlannerHandle {
    PlanSource source = PlanSource::kGroundTruth;
    const planner::NextTokenModel* model = nullptr;
    planner::BeamConfig beam;
};

struct StageResult {
    StageOutcome outcome = StageOutcome::kTimeout;
    int steps_used = 0;
};

// One closed-loop stage: align check, chunk sampling, partial execution,
// stop detection, budget tracking. Visited states append to trace when given.
StageResult run_stage(world::WorldState& state, ChunkPolicy& policy,
                      const planner::PlanStep& step, const ExecutorConfig& cfg,
                      Rng& rng, RolloutLog& log, int* clock,
                      std::vector<world::WorldState>* trace = nullptr);

struct TaskResult {
    world::Metrics metrics;
    std::vector<StageOutcome> stage_outcomes;
    RolloutLog log;
    std::string failure_reason;  // empty unless the rollout failed outright
};

TaskResult run_task(const world::ScenarioDescriptor& scenario,
                    std::uint64_t seed, const PlannerHandle& planner,
                    ChunkPolicy& policy, const ExecutorConfig& cfg);

struct EvalPolicy {
    std::string name;
    ChunkPolicy* policy = nullptr;
};

struct EvalSet {
    std::string name;
    std::vector<world::ScenarioDescriptor> scenarios;
};

struct EvalConfig {
    int rollouts = 3;
    std::uint64_t master_seed = 0;
    int jobs = 1;
    ExecutorConfig exec;
};

struct EvalRow {
    std::string policy;
    std::string set;
    std::string category;  // "all" for the aggregate row
    int tablecloth = 0;    // 0 for the aggregate row
    double approach = 0.0;
    double success = 0.0;
    int n = 0;
};

std::vector<EvalRow> evaluate(std::span<const EvalPolicy> policies,
                              std::span<const EvalSet> sets,
                              const PlannerHandle& planner,
                              const EvalConfig& cfg);

void write_metrics_csv(const std::filesystem::path& path,
                       std::span<const EvalRow> rows);
std::string format_metrics_table(std::span<const EvalRow> rows);

// Ground-truth plan steps carry the labeled goal rasters of an episode.
std::vector<planner::PlanStep> plan_steps_from_ground_truth(
    const world::Episode& episode, const milestone::MilestonePlan& plan);

}  // namespace desk::exec

#endif  // DESKSTACK_EXECUTOR_HPP
