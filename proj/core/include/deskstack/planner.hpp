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

#ifndef DESKSTACK_PLANNER_HPP
#define DESKSTACK_PLANNER_HPP

#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <unordered_map>
#include <vector>

#include "deskstack/checkpoint.hpp"
#include "deskstack/codec.hpp"
#include "deskstack/nn.hpp"

namespace desk::planner {

using codec::Token;
using codec::TokenSequence;

// Next-token distribution over the full vocabulary; outputs sum to 1 within
// 1e-9 and are deterministic given parameters and history.
class NextTokenModel {
  public:
    virtual ~NextTokenModel() = default;
    virtual void probs(std::span<const Token> history,
                       std::span<double> out) const = 0;
};

// Exact n-gram counting model. order is the n-gram order (context length is
// order-1, PAD-left at sequence starts); order 0 means the whole history is
// the context, which makes the model an exact memorizer of its corpus.
class CountModel : public NextTokenModel {
  public:
    explicit CountModel(int order = 4, double alpha = 0.0);

    void train(std::span<const TokenSequence> corpus);
    void probs(std::span<const Token> history,
               std::span<double> out) const override;

    int order() const { return order_; }
    double alpha() const { return alpha_; }
    // Entropy of the count tables, averaged per occurrence; equals the
    // cross-entropy of the model on its own corpus when alpha = 0.
    double table_entropy() const;

    void save(const std::filesystem::path& path) const;
    static CountModel load(const std::filesystem::path& path);

  private:
    struct Entry {
        std::vector<Token> context;
        std::vector<std::pair<Token, std::uint32_t>> counts;
        std::uint64_t total = 0;
    };

    std::vector<Token> context_of(std::span<const Token> history) const;
    void count_transition(std::span<const Token> context, Token next);
    const Entry* lookup(std::span<const Token> context) const;

    int order_;
    double alpha_;
    std::unordered_map<std::uint64_t, std::vector<Entry>> table_;
    std::vector<std::vector<Token>> corpus_;  // kept for serialization
};

// Fixed-left-context MLP over token embeddings: the desk-scale stand-in for
// the autoregressive transformer. The scalar type is templated so gradient
// checks can run a 64-bit replica of the same code.
template <typename T>
struct ContextMlpNet {
    int context = 64;
    int embed_dim = 32;
    int hidden = 128;
    std::vector<T> embedding;  // vocab x embed_dim
    nn::Linear<T> fc1, fc2, fc3;

    void init(Rng& rng);
    // history is PAD-left padded/truncated to the context window internally.
    void forward(std::span<const Token> history, std::span<double> probs) const;
    // Returns -log P(target | history) and accumulates parameter gradients
    // in declaration order: embedding, fc1.w, fc1.b, fc2.w, fc2.b, fc3.w,
    // fc3.b. Gradients accumulate in double.
    double position_grad(std::span<const Token> history, Token target,
                         nn::GradBuffer& grads) const;

    std::vector<std::size_t> grad_shapes() const;

    template <typename U>
    void copy_from(const ContextMlpNet<U>& other);

  private:
    void window(std::span<const Token> history, std::span<Token> out) const;
    void activations(std::span<const Token> win, std::vector<T>& x,
                     std::vector<T>& h1, std::vector<T>& h2,
                     std::vector<T>& logits) const;
};

class ContextMlpModel : public NextTokenModel {
  public:
    explicit ContextMlpModel(std::uint64_t init_seed = 0x31415u);

    void probs(std::span<const Token> history,
               std::span<double> out) const override;

    ContextMlpNet<float>& net() { return net_; }
    const ContextMlpNet<float>& net() const { return net_; }
    std::vector<nn::ParamView> params();

    void save(const std::filesystem::path& path) const;
    static ContextMlpModel load(const std::filesystem::path& path);

  private:
    ContextMlpNet<float> net_;
};

// First supervised position of an assembled sequence: the index of the first
// token after the instruction EOT. Context-frame and instruction tokens are
// excluded from the loss.
std::size_t supervised_start(std::span<const Token> tokens);

struct CeResult {
    double loss = 0.0;          // nats per supervised token
    std::size_t positions = 0;  // K'
};

// Cross-entropy of any model on one sequence; zero probability at a
// supervised position raises (out-of-distribution CountModel call).
CeResult ce_loss(const NextTokenModel& model, const TokenSequence& sequence);

// Loss plus parameter gradients for the MLP (mean over supervised positions).
CeResult ce_loss_grad(const ContextMlpModel& model,
                      const TokenSequence& sequence, nn::GradBuffer& grads);

struct TrainConfig {
    int steps = 2000;
    double lr = 0.1;
    int batch = 64;
    std::uint64_t seed = 0;
    double momentum = 0.9;
};

struct TrainResult {
    std::vector<double> curve;  // per-step batch loss
};

// One counting pass for CountModel is exposed via CountModel::train; this is
// the seeded minibatch SGD loop for the MLP.
TrainResult train(ContextMlpModel& model,
                  std::span<const TokenSequence> corpus,
                  const TrainConfig& config);

using MaskFn =
    std::function<void(std::span<const Token>, std::span<std::uint8_t>)>;

struct BeamConfig {
    int width = 4;
    int max_new_tokens = static_cast<int>(codec::kMaxSequenceLen);
    // Defaults to the sequence grammar; tests may substitute an open mask.
    MaskFn mask;
};

class BeamTimeoutError : public RuntimeFailure {
  public:
    BeamTimeoutError(std::string msg, TokenSequence best)
        : RuntimeFailure(std::move(msg)), best_unfinished(std::move(best)) {}
    TokenSequence best_unfinished;
};

// Width-B masked beam search scored by the raw log-probability sum (no
// length normalization); ties break toward the lexicographically smaller
// token sequence. Candidates emitting SEQ_END freeze; returns once the
// pool's best candidate is finished.
TokenSequence beam_search(const NextTokenModel& model,
                          const TokenSequence& prefix,
                          const BeamConfig& config);

struct PlanStep {
    std::string subtask;
    std::array<world::Raster, 2> goal;
    int stage_index = 0;
};

std::vector<PlanStep> decode_plan(const TokenSequence& sequence,
                                  int start_stage);

}  // namespace desk::planner

#endif  // DESKSTACK_PLANNER_HPP
