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

#ifndef DESKSTACK_POLICY_HPP
#define DESKSTACK_POLICY_HPP

#include <array>
#include <filesystem>
#include <functional>
#include <span>
#include <vector>

#include "deskstack/codec.hpp"
#include "deskstack/episode_io.hpp"
#include "deskstack/nn.hpp"

namespace desk::policy {

constexpr int kChunkLen = 30;
constexpr int kActionDim = 4;
constexpr int kChunkValues = kChunkLen * kActionDim;  // 120
constexpr int kViewFeatures = world::kCells;          // 256 per view
constexpr int kObsFeatures = 2 * kViewFeatures;       // 512
constexpr int kEmbedDim = 32;
constexpr int kProprio = 4;
constexpr int kCondWidth = 2 * kObsFeatures + kEmbedDim + kProprio;  // 1060
constexpr int kPolicyInput = kChunkValues + kCondWidth + 3;          // 1183
constexpr int kPolicyHidden = 256;
constexpr float kPaletteScale = 63.0f;

// 30 x (dx, dy, dz, dg), row-major.
struct ActionChunk {
    std::array<float, kChunkValues> v{};

    float& at(int step, int dim) {
        return v[static_cast<std::size_t>(step * kActionDim + dim)];
    }
    float at(int step, int dim) const {
        return v[static_cast<std::size_t>(step * kActionDim + dim)];
    }
    double mean_abs() const;
};

// Policy conditioning. Raster cells enter as palette_code / 63; the subtask
// enters as token ids whose learned embeddings are averaged inside the net.
struct Conditioning {
    std::array<float, kObsFeatures> obs{};
    std::array<float, kObsFeatures> goal{};
    std::vector<codec::Token> subtask_tokens;
    std::array<float, kProprio> proprio{};
};

void raster_features(const std::array<world::Raster, 2>& views,
                     std::span<float> out /* size 512 */);

struct FlowSample {
    std::array<float, kChunkValues> z{};
    std::array<float, kChunkValues> x_tau{};
    std::array<float, kChunkValues> v_tau{};
    float tau = 0.0f;
    Conditioning cond;
};

// Deterministic core: x_tau = (1-tau) z + tau a, v_tau = a - z, in float32.
FlowSample flow_sample_at(const ActionChunk& a, const Conditioning& cond,
                          const std::array<float, kChunkValues>& z, float tau);
// z ~ N(0, I), tau ~ Uniform(0, 1).
FlowSample make_flow_sample(const ActionChunk& a, const Conditioning& cond,
                            Rng& rng);

// Velocity-field MLP: [x_tau, cond, tau, sin 2pi tau, cos 2pi tau] -> 256
// tanh -> 256 tanh -> 120. Templated for 64-bit gradient-check replicas.
template <typename T>
struct FlowNet {
    std::vector<T> embedding;  // vocab x kEmbedDim
    nn::Linear<T> fc1, fc2, fc3;

    void init(Rng& rng);
    void forward(std::span<const T> x_tau, const Conditioning& cond, T tau,
                 std::span<T> out) const;
    // Accumulates d(loss)/d(params) for loss contribution
    // w * ||forward(...) - v_tau||^2; gradient slots in declaration order:
    // embedding, fc1.w, fc1.b, fc2.w, fc2.b, fc3.w, fc3.b.
    double sample_grad(const FlowSample& sample, double weight,
                       nn::GradBuffer& grads) const;
    std::vector<std::size_t> grad_shapes() const;

    template <typename U>
    void copy_from(const FlowNet<U>& other);

  private:
    void assemble_input(std::span<const T> x_tau, const Conditioning& cond,
                        T tau, std::vector<T>& input) const;
};

class FlowPolicy {
  public:
    explicit FlowPolicy(std::uint64_t init_seed = 0x271828u,
                        bool use_goal = true);

    FlowNet<float>& net() { return net_; }
    const FlowNet<float>& net() const { return net_; }
    bool use_goal() const { return use_goal_; }
    std::vector<nn::ParamView> params();

    void save(const std::filesystem::path& path) const;
    static FlowPolicy load(const std::filesystem::path& path);

  private:
    FlowNet<float> net_;
    bool use_goal_ = true;
};

// Mean over the batch of the squared L2 distance between the predicted and
// target velocities; fills analytic gradients when grads is non-null.
double flow_loss(const FlowPolicy& policy, std::span<const FlowSample> batch,
                 nn::GradBuffer* grads);

// Euler integration x_{j+1} = x_j + field(x_j, j/steps) / steps from x_0 = z.
using VelocityField =
    std::function<void(std::span<const float>, float, std::span<float>)>;
ActionChunk euler_integrate(const VelocityField& field,
                            const std::array<float, kChunkValues>& z,
                            int steps);

// Euler integration of the learned velocity field from pure noise.
ActionChunk sample_chunk(const FlowPolicy& policy, const Conditioning& cond,
                         int steps, Rng& rng);

// Zeroes the chunk tail that crosses the current milestone boundary:
// offsets >= boundary - t become exactly zero.
ActionChunk pad_chunk(const ActionChunk& raw, int t, int boundary);

struct GoalChoice {
    std::array<world::Raster, 2> goal;
    int effective_stage = 0;
    int goal_frame = 0;
};

// Random goal-offset augmentation around stage boundaries; inside the
// overlap window the sample may be relabeled to the next stage.
GoalChoice offset_goal(const world::Episode& episode,
                       const milestone::MilestonePlan& plan, int t, int stage,
                       int window, Rng& rng);

struct Sample {
    Conditioning cond;
    ActionChunk target;
    int episode_id = 0;
    int frame = 0;
};

struct DatasetConfig {
    int window = 5;  // overlap window W, frames
    std::uint64_t seed = 0;
    bool zero_goal = false;  // language-only baseline
    int jobs = 1;
};

// One sample per frame of every episode, deterministic given the seed
// (per-sample streams keyed by episode id and frame, so parallel builds and
// storage order cannot change the result).
std::vector<Sample> build_dataset(std::span<const io::LabeledEpisode> episodes,
                                  const DatasetConfig& config);

struct PolicyTrainConfig {
    int steps = 4000;
    double lr = 0.02;
    int batch = 64;
    std::uint64_t seed = 0;
    double momentum = 0.9;
};

struct TrainResult {
    std::vector<double> curve;
};

TrainResult train_policy(FlowPolicy& policy, std::span<const Sample> dataset,
                         const PolicyTrainConfig& config);

}  // namespace desk::policy

#endif  // DESKSTACK_POLICY_HPP
