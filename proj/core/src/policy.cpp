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

#include "deskstack/policy.hpp"

#include "deskstack/checkpoint.hpp"

#include <algorithm>
#include <cmath>
#include <future>
#include <numeric>

namespace desk::policy {

using codec::VocabLayout;

double ActionChunk::mean_abs() const {
    double sum = 0.0;
    for (float x : v) sum += std::fabs(static_cast<double>(x));
    return sum / kChunkValues;
}

void raster_features(const std::array<world::Raster, 2>& views,
                     std::span<float> out) {
    if (out.size() != kObsFeatures) {
        throw ValidationError("raster feature buffer must hold 512 values");
    }
    for (int v = 0; v < 2; ++v) {
        for (int c = 0; c < world::kCells; ++c) {
            out[static_cast<std::size_t>(v * world::kCells + c)] =
                static_cast<float>(views[static_cast<std::size_t>(v)]
                                       .grid[static_cast<std::size_t>(c)]) /
                kPaletteScale;
        }
    }
}

FlowSample flow_sample_at(const ActionChunk& a, const Conditioning& cond,
                          const std::array<float, kChunkValues>& z, float tau) {
    FlowSample s;
    s.z = z;
    s.tau = tau;
    s.cond = cond;
    for (int i = 0; i < kChunkValues; ++i) {
        const auto idx = static_cast<std::size_t>(i);
        s.x_tau[idx] = (1.0f - tau) * z[idx] + tau * a.v[idx];
        s.v_tau[idx] = a.v[idx] - z[idx];
    }
    return s;
}

FlowSample make_flow_sample(const ActionChunk& a, const Conditioning& cond,
                            Rng& rng) {
    for (float x : a.v) {
        if (!std::isfinite(x)) throw ValidationError("non-finite action chunk");
    }
    std::array<float, kChunkValues> z;
    for (auto& v : z) v = static_cast<float>(rng.normal());
    const auto tau = static_cast<float>(rng.uniform());
    return flow_sample_at(a, cond, z, tau);
}

template <typename T>
void FlowNet<T>::init(Rng& rng) {
    embedding.resize(static_cast<std::size_t>(VocabLayout::kVocabSize) *
                     kEmbedDim);
    for (auto& v : embedding) v = static_cast<T>(rng.normal() * 0.1);
    fc1.init(kPolicyInput, kPolicyHidden, rng,
             1.0 / std::sqrt(static_cast<double>(kPolicyInput)));
    fc2.init(kPolicyHidden, kPolicyHidden, rng,
             1.0 / std::sqrt(static_cast<double>(kPolicyHidden)));
    fc3.init(kPolicyHidden, kChunkValues, rng,
             1.0 / std::sqrt(static_cast<double>(kPolicyHidden)));
}

template <typename T>
void FlowNet<T>::assemble_input(std::span<const T> x_tau,
                                const Conditioning& cond, T tau,
                                std::vector<T>& input) const {
    input.resize(kPolicyInput);
    std::size_t k = 0;
    for (int i = 0; i < kChunkValues; ++i) {
        input[k++] = x_tau[static_cast<std::size_t>(i)];
    }
    for (float v : cond.obs) input[k++] = static_cast<T>(v);
    for (float v : cond.goal) input[k++] = static_cast<T>(v);
    const double inv =
        cond.subtask_tokens.empty()
            ? 0.0
            : 1.0 / static_cast<double>(cond.subtask_tokens.size());
    for (int j = 0; j < kEmbedDim; ++j) {
        double acc = 0.0;
        for (auto t : cond.subtask_tokens) {
            acc += static_cast<double>(
                embedding[static_cast<std::size_t>(t) * kEmbedDim +
                          static_cast<std::size_t>(j)]);
        }
        input[k++] = static_cast<T>(acc * inv);
    }
    for (float v : cond.proprio) input[k++] = static_cast<T>(v);
    const double taud = static_cast<double>(tau);
    input[k++] = tau;
    input[k++] = static_cast<T>(std::sin(2.0 * M_PI * taud));
    input[k++] = static_cast<T>(std::cos(2.0 * M_PI * taud));
}

template <typename T>
void FlowNet<T>::forward(std::span<const T> x_tau, const Conditioning& cond,
                         T tau, std::span<T> out) const {
    std::vector<T> input, h1(kPolicyHidden), h2(kPolicyHidden);
    assemble_input(x_tau, cond, tau, input);
    fc1.forward(input, h1);
    nn::tanh_forward<T>(h1);
    fc2.forward(h1, h2);
    nn::tanh_forward<T>(h2);
    fc3.forward(h2, out);
}

template <typename T>
double FlowNet<T>::sample_grad(const FlowSample& sample, double weight,
                               nn::GradBuffer& grads) const {
    std::vector<T> input, h1(kPolicyHidden), h2(kPolicyHidden),
        pred(kChunkValues);
    std::vector<T> x(kChunkValues);
    for (int i = 0; i < kChunkValues; ++i) {
        x[static_cast<std::size_t>(i)] =
            static_cast<T>(sample.x_tau[static_cast<std::size_t>(i)]);
    }
    assemble_input(x, sample.cond, static_cast<T>(sample.tau), input);
    fc1.forward(input, h1);
    nn::tanh_forward<T>(h1);
    fc2.forward(h1, h2);
    nn::tanh_forward<T>(h2);
    fc3.forward(h2, pred);

    double loss = 0.0;
    std::vector<double> dout(kChunkValues);
    for (int i = 0; i < kChunkValues; ++i) {
        const auto idx = static_cast<std::size_t>(i);
        const double d = static_cast<double>(pred[idx]) -
                         static_cast<double>(sample.v_tau[idx]);
        loss += d * d;
        dout[idx] = 2.0 * weight * d;
    }

    std::vector<double> dh2(kPolicyHidden, 0.0), dh1(kPolicyHidden, 0.0),
        dinput(static_cast<std::size_t>(kPolicyInput), 0.0);
    fc3.backward(h2, dout, grads.slots[5], grads.slots[6], dh2);
    nn::tanh_backward<T>(h2, dh2);
    fc2.backward(h1, dh2, grads.slots[3], grads.slots[4], dh1);
    nn::tanh_backward<T>(h1, dh1);
    fc1.backward(input, dh1, grads.slots[1], grads.slots[2], dinput);

    if (!sample.cond.subtask_tokens.empty()) {
        const double inv =
            1.0 / static_cast<double>(sample.cond.subtask_tokens.size());
        const std::size_t emb_off =
            static_cast<std::size_t>(kChunkValues + 2 * kObsFeatures);
        auto& demb = grads.slots[0];
        for (auto t : sample.cond.subtask_tokens) {
            for (int j = 0; j < kEmbedDim; ++j) {
                demb[static_cast<std::size_t>(t) * kEmbedDim +
                     static_cast<std::size_t>(j)] +=
                    dinput[emb_off + static_cast<std::size_t>(j)] * inv;
            }
        }
    }
    return loss;
}

template <typename T>
std::vector<std::size_t> FlowNet<T>::grad_shapes() const {
    return {embedding.size(), fc1.w.size(), fc1.b.size(), fc2.w.size(),
            fc2.b.size(),     fc3.w.size(), fc3.b.size()};
}

template <typename T>
template <typename U>
void FlowNet<T>::copy_from(const FlowNet<U>& other) {
    auto cast = [](const auto& src, auto& dst) {
        dst.resize(src.size());
        for (std::size_t i = 0; i < src.size(); ++i) {
            dst[i] = static_cast<T>(src[i]);
        }
    };
    cast(other.embedding, embedding);
    auto copy_linear = [&](const auto& src, nn::Linear<T>& dst) {
        dst.in = src.in;
        dst.out = src.out;
        cast(src.w, dst.w);
        cast(src.b, dst.b);
    };
    copy_linear(other.fc1, fc1);
    copy_linear(other.fc2, fc2);
    copy_linear(other.fc3, fc3);
}

template struct FlowNet<float>;
template struct FlowNet<double>;
template void FlowNet<double>::copy_from<float>(const FlowNet<float>&);
template void FlowNet<float>::copy_from<double>(const FlowNet<double>&);

FlowPolicy::FlowPolicy(std::uint64_t init_seed, bool use_goal)
    : use_goal_(use_goal) {
    Rng rng(init_seed);
    net_.init(rng);
}

std::vector<nn::ParamView> FlowPolicy::params() {
    return {
        {"embedding", net_.embedding.data(), net_.embedding.size()},
        {"fc1.w", net_.fc1.w.data(), net_.fc1.w.size()},
        {"fc1.b", net_.fc1.b.data(), net_.fc1.b.size()},
        {"fc2.w", net_.fc2.w.data(), net_.fc2.w.size()},
        {"fc2.b", net_.fc2.b.data(), net_.fc2.b.size()},
        {"fc3.w", net_.fc3.w.data(), net_.fc3.w.size()},
        {"fc3.b", net_.fc3.b.data(), net_.fc3.b.size()},
    };
}

void FlowPolicy::save(const std::filesystem::path& path) const {
    std::vector<ckpt::NamedTensor> tensors;
    tensors.push_back(
        ckpt::NamedTensor::scalar("use_goal", use_goal_ ? 1.0f : 0.0f));
    tensors.push_back(ckpt::NamedTensor::matrix(
        "embedding", VocabLayout::kVocabSize, kEmbedDim, net_.embedding));
    auto push_linear = [&](const char* name, const nn::Linear<float>& l) {
        tensors.push_back(ckpt::NamedTensor::matrix(
            std::string(name) + ".w", static_cast<std::uint32_t>(l.out),
            static_cast<std::uint32_t>(l.in), l.w));
        tensors.push_back(
            ckpt::NamedTensor::vector(std::string(name) + ".b", l.b));
    };
    push_linear("fc1", net_.fc1);
    push_linear("fc2", net_.fc2);
    push_linear("fc3", net_.fc3);
    ckpt::write_checkpoint(path, ckpt::ModelKind::kFlowPolicy, tensors);
}

FlowPolicy FlowPolicy::load(const std::filesystem::path& path) {
    auto [kind, tensors] = ckpt::read_checkpoint(path);
    if (kind != ckpt::ModelKind::kFlowPolicy) {
        throw ValidationError("checkpoint is not a flow policy");
    }
    FlowPolicy policy;
    policy.use_goal_ =
        ckpt::find_tensor(tensors, "use_goal").data.at(0) != 0.0f;
    policy.net_.embedding = ckpt::find_tensor(tensors, "embedding").data;
    auto load_linear = [&](const char* name, nn::Linear<float>& l) {
        const auto& w = ckpt::find_tensor(tensors, std::string(name) + ".w");
        l.out = static_cast<int>(w.dims.at(0));
        l.in = static_cast<int>(w.dims.at(1));
        l.w = w.data;
        l.b = ckpt::find_tensor(tensors, std::string(name) + ".b").data;
    };
    load_linear("fc1", policy.net_.fc1);
    load_linear("fc2", policy.net_.fc2);
    load_linear("fc3", policy.net_.fc3);
    return policy;
}

double flow_loss(const FlowPolicy& policy, std::span<const FlowSample> batch,
                 nn::GradBuffer* grads) {
    if (batch.empty()) throw ValidationError("empty flow batch");
    const double w = 1.0 / static_cast<double>(batch.size());
    nn::GradBuffer scratch;
    nn::GradBuffer* g = grads;
    if (g == nullptr) {
        // loss-only path still uses the same code; gradients are discarded
        scratch.slots.resize(7);
        const auto shapes = policy.net().grad_shapes();
        for (std::size_t i = 0; i < shapes.size(); ++i) {
            scratch.slots[i].assign(shapes[i], 0.0);
        }
        g = &scratch;
    }
    double loss = 0.0;
    for (std::size_t i = 0; i < batch.size(); ++i) {
        const double l = policy.net().sample_grad(batch[i], w, *g);
        if (!std::isfinite(l)) {
            throw RuntimeFailure("non-finite flow loss at batch sample " +
                                 std::to_string(i));
        }
        loss += l;
    }
    return loss * w;
}

ActionChunk euler_integrate(const VelocityField& field,
                            const std::array<float, kChunkValues>& z,
                            int steps) {
    if (steps < 1) throw ValidationError("flow decoding needs steps >= 1");
    std::array<float, kChunkValues> x = z;
    std::array<float, kChunkValues> v{};
    const float inv = 1.0f / static_cast<float>(steps);
    for (int j = 0; j < steps; ++j) {
        const float tau = static_cast<float>(j) * inv;
        field(x, tau, v);
        for (int i = 0; i < kChunkValues; ++i) {
            const auto idx = static_cast<std::size_t>(i);
            x[idx] += inv * v[idx];
            if (!std::isfinite(x[idx])) {
                throw RuntimeFailure("non-finite flow state at step " +
                                     std::to_string(j));
            }
        }
    }
    ActionChunk out;
    out.v = x;
    return out;
}

ActionChunk sample_chunk(const FlowPolicy& policy, const Conditioning& cond,
                         int steps, Rng& rng) {
    std::array<float, kChunkValues> z;
    for (auto& v : z) v = static_cast<float>(rng.normal());
    const auto& net = policy.net();
    return euler_integrate(
        [&](std::span<const float> x, float tau, std::span<float> v) {
            net.forward(x, cond, tau, v);
        },
        z, steps);
}

ActionChunk pad_chunk(const ActionChunk& raw, int t, int boundary) {
    if (t > boundary) {
        throw ValidationError(
            "pad_chunk frame is past the milestone boundary; relabel first");
    }
    ActionChunk out = raw;
    const int k0 = boundary - t;
    for (int k = k0; k < kChunkLen; ++k) {
        for (int d = 0; d < kActionDim; ++d) out.at(k, d) = 0.0f;
    }
    return out;
}

GoalChoice offset_goal(const world::Episode& episode,
                       const milestone::MilestonePlan& plan, int t, int stage,
                       int window, Rng& rng) {
    if (window < 0) throw ValidationError("offset window must be >= 0");
    if (stage < 0 || stage >= plan.stage_count()) {
        throw ValidationError("stage outside plan");
    }
    const auto& seg = plan.segments[static_cast<std::size_t>(stage)];
    const int b = seg.to;
    const int last = episode.length() - 1;
    const bool last_stage = stage == plan.stage_count() - 1;

    auto rasters_at = [&](int frame_head, int frame_wrist) {
        return std::array<world::Raster, 2>{
            episode.rasters[static_cast<std::size_t>(frame_head)][0],
            episode.rasters[static_cast<std::size_t>(frame_wrist)][1]};
    };

    if (std::abs(t - b) <= window && !last_stage) {
        if (rng.uniform() < 0.5) {
            const auto& next = plan.segments[static_cast<std::size_t>(stage + 1)];
            return {rasters_at(next.goal_frame[0], next.goal_frame[1]),
                    stage + 1, next.goal_frame[0]};
        }
        return {rasters_at(seg.goal_frame[0], seg.goal_frame[1]), stage,
                seg.goal_frame[0]};
    }

    const int delta = static_cast<int>(rng.uniform_int(-window, window));
    const int frame = std::clamp(b + delta, seg.from, last);
    return {rasters_at(frame, frame), stage, frame};
}

namespace {

Sample build_sample(const io::LabeledEpisode& le, int episode_id, int t,
                    const DatasetConfig& cfg) {
    const auto& ep = le.episode;
    const auto& plan = *le.plan;
    const int stage = plan.stage_of_frame(t);
    Rng rng(mix_seed(cfg.seed, static_cast<std::uint64_t>(episode_id),
                     static_cast<std::uint64_t>(t)));
    const auto gc = offset_goal(ep, plan, t, stage, cfg.window, rng);
    const int boundary = plan.boundary(gc.effective_stage);

    ActionChunk raw;
    const int n_actions = static_cast<int>(ep.actions.size());
    for (int k = 0; k < kChunkLen; ++k) {
        if (t + k < n_actions) {
            const auto& a = ep.actions[static_cast<std::size_t>(t + k)];
            raw.at(k, 0) = a.dx;
            raw.at(k, 1) = a.dy;
            raw.at(k, 2) = a.dz;
            raw.at(k, 3) = a.dg;
        }
    }

    Sample s;
    s.episode_id = episode_id;
    s.frame = t;
    s.target = pad_chunk(raw, t, boundary);
    raster_features(ep.rasters[static_cast<std::size_t>(t)], s.cond.obs);
    if (cfg.zero_goal) {
        s.cond.goal.fill(0.0f);
    } else {
        raster_features(gc.goal, s.cond.goal);
    }
    s.cond.subtask_tokens = codec::tokenize_text(
        codec::VocabLayout::standard(),
        plan.segments[static_cast<std::size_t>(gc.effective_stage)].subtask);
    const auto& st = ep.states[static_cast<std::size_t>(t)];
    s.cond.proprio = {st.gx, st.gy, st.gz, st.gripper_open};
    return s;
}

}  // namespace

std::vector<Sample> build_dataset(std::span<const io::LabeledEpisode> episodes,
                                  const DatasetConfig& config) {
    for (const auto& le : episodes) {
        if (!le.plan.has_value()) {
            throw ValidationError("episode without milestones in dataset");
        }
        le.plan->validate(le.episode.length());
    }
    auto build_episode = [&](int id) {
        std::vector<Sample> out;
        const auto& le = episodes[static_cast<std::size_t>(id)];
        out.reserve(static_cast<std::size_t>(le.episode.length()));
        for (int t = 0; t < le.episode.length(); ++t) {
            out.push_back(build_sample(le, id, t, config));
        }
        return out;
    };

    std::vector<std::vector<Sample>> parts(episodes.size());
    if (config.jobs > 1) {
        std::vector<std::future<std::vector<Sample>>> futures;
        for (int id = 0; id < static_cast<int>(episodes.size()); ++id) {
            futures.push_back(
                std::async(std::launch::async, build_episode, id));
        }
        for (std::size_t i = 0; i < futures.size(); ++i) {
            parts[i] = futures[i].get();
        }
    } else {
        for (int id = 0; id < static_cast<int>(episodes.size()); ++id) {
            parts[static_cast<std::size_t>(id)] = build_episode(id);
        }
    }
    std::vector<Sample> out;
    for (auto& p : parts) {
        out.insert(out.end(), std::make_move_iterator(p.begin()),
                   std::make_move_iterator(p.end()));
    }
    return out;
}

TrainResult train_policy(FlowPolicy& policy, std::span<const Sample> dataset,
                         const PolicyTrainConfig& config) {
    if (dataset.empty()) throw ValidationError("empty policy dataset");

    // Batching is keyed on (episode, frame), not storage order, so a
    // permuted dataset trains identically.
    std::vector<std::size_t> order(dataset.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        if (dataset[a].episode_id != dataset[b].episode_id) {
            return dataset[a].episode_id < dataset[b].episode_id;
        }
        return dataset[a].frame < dataset[b].frame;
    });

    auto params = policy.params();
    nn::GradBuffer grads;
    grads.match(params);
    nn::SgdMomentum opt;
    opt.lr = config.lr;
    opt.momentum = config.momentum;
    Rng rng(config.seed);

    TrainResult result;
    double initial = 0.0;
    int high_loss_streak = 0;
    for (int step = 0; step < config.steps; ++step) {
        grads.zero();
        const double w = 1.0 / config.batch;
        double loss = 0.0;
        for (int b = 0; b < config.batch; ++b) {
            const auto pick = order[static_cast<std::size_t>(rng.uniform_int(
                0, static_cast<std::int64_t>(order.size()) - 1))];
            const auto& sample = dataset[pick];
            const auto fs = make_flow_sample(sample.target, sample.cond, rng);
            loss += policy.net().sample_grad(fs, w, grads);
        }
        loss *= w;
        if (!std::isfinite(loss)) {
            throw RuntimeFailure("non-finite policy loss at step " +
                                 std::to_string(step));
        }
        if (step == 0) initial = loss;
        high_loss_streak = loss > 10.0 * initial ? high_loss_streak + 1 : 0;
        if (high_loss_streak >= 100) {
            throw RuntimeFailure("policy training diverged at step " +
                                 std::to_string(step));
        }
        opt.step(params, grads);
        result.curve.push_back(loss);
    }
    return result;
}

}  // namespace desk::policy
