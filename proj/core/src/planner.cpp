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

#include "deskstack/planner.hpp"

#include <algorithm>
#include <cmath>

namespace desk::planner {

using codec::VocabLayout;

namespace {

std::uint64_t hash_tokens(std::span<const Token> tokens) {
    return fnv1a64(tokens.data(), tokens.size() * sizeof(Token));
}

}  // namespace

CountModel::CountModel(int order, double alpha) : order_(order), alpha_(alpha) {
    if (order < 0) throw ValidationError("count model order must be >= 0");
    if (alpha < 0.0) throw ValidationError("count model alpha must be >= 0");
}

std::vector<Token> CountModel::context_of(std::span<const Token> history) const {
    if (order_ == 0) return {history.begin(), history.end()};
    const std::size_t n = static_cast<std::size_t>(order_ - 1);
    std::vector<Token> ctx(n, VocabLayout::kPad);
    const std::size_t take = std::min(history.size(), n);
    std::copy(history.end() - static_cast<std::ptrdiff_t>(take), history.end(),
              ctx.end() - static_cast<std::ptrdiff_t>(take));
    return ctx;
}

void CountModel::count_transition(std::span<const Token> context, Token next) {
    auto& bucket = table_[hash_tokens(context)];
    for (auto& entry : bucket) {
        if (std::equal(entry.context.begin(), entry.context.end(),
                       context.begin(), context.end())) {
            ++entry.total;
            for (auto& [tok, c] : entry.counts) {
                if (tok == next) {
                    ++c;
                    return;
                }
            }
            entry.counts.emplace_back(next, 1);
            return;
        }
    }
    Entry e;
    e.context.assign(context.begin(), context.end());
    e.counts.emplace_back(next, 1);
    e.total = 1;
    bucket.push_back(std::move(e));
}

const CountModel::Entry* CountModel::lookup(
    std::span<const Token> context) const {
    const auto it = table_.find(hash_tokens(context));
    if (it == table_.end()) return nullptr;
    for (const auto& entry : it->second) {
        if (entry.context.size() == context.size() &&
            std::equal(entry.context.begin(), entry.context.end(),
                       context.begin(), context.end())) {
            return &entry;
        }
    }
    return nullptr;
}

void CountModel::train(std::span<const TokenSequence> corpus) {
    for (const auto& seq : corpus) {
        const auto start = supervised_start(seq.tokens);
        for (std::size_t k = start; k < seq.tokens.size(); ++k) {
            const auto ctx = context_of(
                std::span<const Token>(seq.tokens.data(), k));
            count_transition(ctx, seq.tokens[k]);
        }
        corpus_.push_back(seq.tokens);
    }
}

void CountModel::probs(std::span<const Token> history,
                       std::span<double> out) const {
    if (out.size() != VocabLayout::kVocabSize) {
        throw ValidationError("probability buffer must cover the vocabulary");
    }
    const auto ctx = context_of(history);
    const Entry* entry = lookup(ctx);
    const double v = static_cast<double>(VocabLayout::kVocabSize);
    if (entry == nullptr) {
        // Out-of-distribution context: uniform under smoothing, zero mass in
        // exact mode (callers surface this as an error).
        const double p = alpha_ > 0.0 ? 1.0 / v : 0.0;
        std::fill(out.begin(), out.end(), p);
        return;
    }
    const double denom = static_cast<double>(entry->total) + alpha_ * v;
    std::fill(out.begin(), out.end(), alpha_ / denom);
    for (const auto& [tok, c] : entry->counts) {
        out[tok] = (static_cast<double>(c) + alpha_) / denom;
    }
}

double CountModel::table_entropy() const {
    double total_positions = 0.0;
    double sum = 0.0;
    for (const auto& [hash, bucket] : table_) {
        for (const auto& entry : bucket) {
            total_positions += static_cast<double>(entry.total);
            for (const auto& [tok, c] : entry.counts) {
                const double p = static_cast<double>(c) /
                                 static_cast<double>(entry.total);
                sum += static_cast<double>(c) * (-std::log(p));
            }
        }
    }
    return total_positions > 0.0 ? sum / total_positions : 0.0;
}

void CountModel::save(const std::filesystem::path& path) const {
    std::vector<ckpt::NamedTensor> tensors;
    tensors.push_back(ckpt::NamedTensor::scalar("order",
                                                static_cast<float>(order_)));
    tensors.push_back(ckpt::NamedTensor::scalar("alpha",
                                                static_cast<float>(alpha_)));
    std::vector<float> lens;
    std::vector<float> flat;
    for (const auto& seq : corpus_) {
        lens.push_back(static_cast<float>(seq.size()));
        for (Token t : seq) flat.push_back(static_cast<float>(t));
    }
    tensors.push_back(ckpt::NamedTensor::vector("corpus_lens", std::move(lens)));
    tensors.push_back(ckpt::NamedTensor::vector("corpus_flat", std::move(flat)));
    ckpt::write_checkpoint(path, ckpt::ModelKind::kCountModel, tensors);
}

CountModel CountModel::load(const std::filesystem::path& path) {
    auto [kind, tensors] = ckpt::read_checkpoint(path);
    if (kind != ckpt::ModelKind::kCountModel) {
        throw ValidationError("checkpoint is not a count model");
    }
    CountModel model(
        static_cast<int>(ckpt::find_tensor(tensors, "order").data.at(0)),
        static_cast<double>(ckpt::find_tensor(tensors, "alpha").data.at(0)));
    const auto& lens = ckpt::find_tensor(tensors, "corpus_lens").data;
    const auto& flat = ckpt::find_tensor(tensors, "corpus_flat").data;
    std::vector<TokenSequence> corpus;
    std::size_t off = 0;
    for (float lf : lens) {
        TokenSequence seq;
        const auto len = static_cast<std::size_t>(lf);
        for (std::size_t i = 0; i < len; ++i) {
            seq.tokens.push_back(static_cast<Token>(flat.at(off + i)));
        }
        off += len;
        corpus.push_back(std::move(seq));
    }
    model.train(corpus);
    return model;
}

template <typename T>
void ContextMlpNet<T>::init(Rng& rng) {
    embedding.resize(static_cast<std::size_t>(VocabLayout::kVocabSize) *
                     static_cast<std::size_t>(embed_dim));
    for (auto& v : embedding) v = static_cast<T>(rng.normal() * 0.1);
    const int in = context * embed_dim;
    fc1.init(in, hidden, rng, 1.0 / std::sqrt(static_cast<double>(in)));
    fc2.init(hidden, hidden, rng, 1.0 / std::sqrt(static_cast<double>(hidden)));
    fc3.init(hidden, static_cast<int>(VocabLayout::kVocabSize), rng,
             1.0 / std::sqrt(static_cast<double>(hidden)));
}

template <typename T>
void ContextMlpNet<T>::window(std::span<const Token> history,
                              std::span<Token> out) const {
    std::fill(out.begin(), out.end(), VocabLayout::kPad);
    const std::size_t take =
        std::min(history.size(), static_cast<std::size_t>(context));
    std::copy(history.end() - static_cast<std::ptrdiff_t>(take), history.end(),
              out.end() - static_cast<std::ptrdiff_t>(take));
}

template <typename T>
void ContextMlpNet<T>::activations(std::span<const Token> win,
                                   std::vector<T>& x, std::vector<T>& h1,
                                   std::vector<T>& h2,
                                   std::vector<T>& logits) const {
    x.resize(static_cast<std::size_t>(context) * embed_dim);
    for (int s = 0; s < context; ++s) {
        const T* row = embedding.data() +
                       static_cast<std::size_t>(win[static_cast<std::size_t>(s)]) * embed_dim;
        std::copy(row, row + embed_dim,
                  x.begin() + static_cast<std::ptrdiff_t>(s) * embed_dim);
    }
    h1.resize(static_cast<std::size_t>(hidden));
    h2.resize(static_cast<std::size_t>(hidden));
    logits.resize(VocabLayout::kVocabSize);
    fc1.forward(x, h1);
    nn::tanh_forward<T>(h1);
    fc2.forward(h1, h2);
    nn::tanh_forward<T>(h2);
    fc3.forward(h2, logits);
}

template <typename T>
void ContextMlpNet<T>::forward(std::span<const Token> history,
                               std::span<double> probs) const {
    std::vector<Token> win(static_cast<std::size_t>(context));
    window(history, win);
    std::vector<T> x, h1, h2, logits;
    activations(win, x, h1, h2, logits);
    nn::softmax<T>(logits, probs);
}

template <typename T>
double ContextMlpNet<T>::position_grad(std::span<const Token> history,
                                       Token target,
                                       nn::GradBuffer& grads) const {
    std::vector<Token> win(static_cast<std::size_t>(context));
    window(history, win);
    std::vector<T> x, h1, h2, logits;
    activations(win, x, h1, h2, logits);
    std::vector<double> p(VocabLayout::kVocabSize);
    nn::softmax<T>(logits, p);
    const double loss = -std::log(std::max(p[target], 1e-300));

    std::vector<double>& dlogits = p;  // reuse: dL/dlogit = p - onehot
    dlogits[target] -= 1.0;
    std::vector<double> dh2(static_cast<std::size_t>(hidden), 0.0);
    std::vector<double> dh1(static_cast<std::size_t>(hidden), 0.0);
    std::vector<double> dx(x.size(), 0.0);

    fc3.backward(h2, dlogits, grads.slots[5], grads.slots[6], dh2);
    nn::tanh_backward<T>(h2, dh2);
    fc2.backward(h1, dh2, grads.slots[3], grads.slots[4], dh1);
    nn::tanh_backward<T>(h1, dh1);
    fc1.backward(x, dh1, grads.slots[1], grads.slots[2], dx);

    auto& demb = grads.slots[0];
    for (int s = 0; s < context; ++s) {
        const std::size_t row =
            static_cast<std::size_t>(win[static_cast<std::size_t>(s)]) * embed_dim;
        for (int j = 0; j < embed_dim; ++j) {
            demb[row + static_cast<std::size_t>(j)] +=
                dx[static_cast<std::size_t>(s * embed_dim + j)];
        }
    }
    return loss;
}

template <typename T>
std::vector<std::size_t> ContextMlpNet<T>::grad_shapes() const {
    return {embedding.size(), fc1.w.size(), fc1.b.size(), fc2.w.size(),
            fc2.b.size(),     fc3.w.size(), fc3.b.size()};
}

template <typename T>
template <typename U>
void ContextMlpNet<T>::copy_from(const ContextMlpNet<U>& other) {
    context = other.context;
    embed_dim = other.embed_dim;
    hidden = other.hidden;
    auto cast = [](const auto& src, auto& dst) {
        dst.resize(src.size());
        for (std::size_t i = 0; i < src.size(); ++i) {
            dst[i] = static_cast<T>(src[i]);
        }
    };
    cast(other.embedding, embedding);
    fc1.in = other.fc1.in;
    fc1.out = other.fc1.out;
    cast(other.fc1.w, fc1.w);
    cast(other.fc1.b, fc1.b);
    fc2.in = other.fc2.in;
    fc2.out = other.fc2.out;
    cast(other.fc2.w, fc2.w);
    cast(other.fc2.b, fc2.b);
    fc3.in = other.fc3.in;
    fc3.out = other.fc3.out;
    cast(other.fc3.w, fc3.w);
    cast(other.fc3.b, fc3.b);
}

template struct ContextMlpNet<float>;
template struct ContextMlpNet<double>;
template void ContextMlpNet<double>::copy_from<float>(
    const ContextMlpNet<float>&);
template void ContextMlpNet<float>::copy_from<double>(
    const ContextMlpNet<double>&);

ContextMlpModel::ContextMlpModel(std::uint64_t init_seed) {
    Rng rng(init_seed);
    net_.init(rng);
}

void ContextMlpModel::probs(std::span<const Token> history,
                            std::span<double> out) const {
    net_.forward(history, out);
}

std::vector<nn::ParamView> ContextMlpModel::params() {
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

void ContextMlpModel::save(const std::filesystem::path& path) const {
    std::vector<ckpt::NamedTensor> tensors;
    tensors.push_back(
        ckpt::NamedTensor::scalar("context", static_cast<float>(net_.context)));
    tensors.push_back(ckpt::NamedTensor::scalar(
        "embed_dim", static_cast<float>(net_.embed_dim)));
    tensors.push_back(
        ckpt::NamedTensor::scalar("hidden", static_cast<float>(net_.hidden)));
    tensors.push_back(ckpt::NamedTensor::matrix(
        "embedding", VocabLayout::kVocabSize,
        static_cast<std::uint32_t>(net_.embed_dim), net_.embedding));
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
    ckpt::write_checkpoint(path, ckpt::ModelKind::kContextMlp, tensors);
}

ContextMlpModel ContextMlpModel::load(const std::filesystem::path& path) {
    auto [kind, tensors] = ckpt::read_checkpoint(path);
    if (kind != ckpt::ModelKind::kContextMlp) {
        throw ValidationError("checkpoint is not a context MLP");
    }
    ContextMlpModel model;
    auto& net = model.net_;
    net.context =
        static_cast<int>(ckpt::find_tensor(tensors, "context").data.at(0));
    net.embed_dim =
        static_cast<int>(ckpt::find_tensor(tensors, "embed_dim").data.at(0));
    net.hidden =
        static_cast<int>(ckpt::find_tensor(tensors, "hidden").data.at(0));
    net.embedding = ckpt::find_tensor(tensors, "embedding").data;
    auto load_linear = [&](const char* name, nn::Linear<float>& l) {
        const auto& w = ckpt::find_tensor(tensors, std::string(name) + ".w");
        l.out = static_cast<int>(w.dims.at(0));
        l.in = static_cast<int>(w.dims.at(1));
        l.w = w.data;
        l.b = ckpt::find_tensor(tensors, std::string(name) + ".b").data;
    };
    load_linear("fc1", net.fc1);
    load_linear("fc2", net.fc2);
    load_linear("fc3", net.fc3);
    return model;
}

std::size_t supervised_start(std::span<const Token> tokens) {
    // The instruction span holds the first EOT: context frames are image-only.
    for (std::size_t i = 0; i < tokens.size(); ++i) {
        if (tokens[i] == VocabLayout::kEot) return i + 1;
    }
    throw ValidationError("sequence has no instruction EOT");
}

CeResult ce_loss(const NextTokenModel& model, const TokenSequence& sequence) {
    std::string err;
    if (!codec::validate_sequence(sequence.tokens, &err)) {
        throw ValidationError("ce_loss on invalid sequence: " + err);
    }
    const std::size_t start = supervised_start(sequence.tokens);
    std::vector<double> p(VocabLayout::kVocabSize);
    double loss = 0.0;
    for (std::size_t k = start; k < sequence.tokens.size(); ++k) {
        model.probs(std::span<const Token>(sequence.tokens.data(), k), p);
        const double pk = p[sequence.tokens[k]];
        if (pk <= 0.0) {
            throw ValidationError(
                "zero predicted probability at supervised position " +
                std::to_string(k) + " (out-of-distribution context)");
        }
        loss -= std::log(pk);
    }
    const std::size_t positions = sequence.tokens.size() - start;
    return {loss / static_cast<double>(positions), positions};
}

CeResult ce_loss_grad(const ContextMlpModel& model,
                      const TokenSequence& sequence, nn::GradBuffer& grads) {
    std::string err;
    if (!codec::validate_sequence(sequence.tokens, &err)) {
        throw ValidationError("ce_loss on invalid sequence: " + err);
    }
    const std::size_t start = supervised_start(sequence.tokens);
    const std::size_t positions = sequence.tokens.size() - start;
    double loss = 0.0;
    for (std::size_t k = start; k < sequence.tokens.size(); ++k) {
        loss += model.net().position_grad(
            std::span<const Token>(sequence.tokens.data(), k),
            sequence.tokens[k], grads);
    }
    const double inv = 1.0 / static_cast<double>(positions);
    for (auto& slot : grads.slots) {
        for (auto& g : slot) g *= inv;
    }
    return {loss * inv, positions};
}

TrainResult train(ContextMlpModel& model,
                  std::span<const TokenSequence> corpus,
                  const TrainConfig& config) {
    if (corpus.empty()) throw ValidationError("empty training corpus");
    struct Range {
        std::size_t start;
        std::size_t count;
    };
    std::vector<Range> ranges;
    std::size_t total = 0;
    for (const auto& seq : corpus) {
        const auto s = supervised_start(seq.tokens);
        ranges.push_back({s, seq.tokens.size() - s});
        total += ranges.back().count;
    }

    auto params = model.params();
    nn::GradBuffer grads;
    grads.match(params);
    nn::SgdMomentum opt;
    opt.lr = config.lr;
    opt.momentum = config.momentum;
    Rng rng(config.seed);

    TrainResult result;
    for (int step = 0; step < config.steps; ++step) {
        grads.zero();
        double loss = 0.0;
        for (int b = 0; b < config.batch; ++b) {
            auto r = static_cast<std::size_t>(
                rng.uniform_int(0, static_cast<std::int64_t>(total) - 1));
            std::size_t si = 0;
            while (r >= ranges[si].count) {
                r -= ranges[si].count;
                ++si;
            }
            const auto& seq = corpus[si];
            const std::size_t k = ranges[si].start + r;
            loss += model.net().position_grad(
                std::span<const Token>(seq.tokens.data(), k), seq.tokens[k],
                grads);
        }
        loss /= config.batch;
        if (!std::isfinite(loss)) {
            throw RuntimeFailure("non-finite training loss at step " +
                                 std::to_string(step));
        }
        const double inv = 1.0 / config.batch;
        for (auto& slot : grads.slots) {
            for (auto& g : slot) g *= inv;
        }
        opt.step(params, grads);
        result.curve.push_back(loss);
    }
    return result;
}

namespace {

struct Candidate {
    std::vector<Token> tokens;
    double score = 0.0;
    bool finished = false;
    codec::GrammarState gstate;  // tracked only in grammar-mask mode
};

bool better(const Candidate& a, const Candidate& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.tokens < b.tokens;
}

TokenSequence to_sequence(const Candidate& c) {
    TokenSequence seq;
    seq.tokens = c.tokens;
    for (std::size_t i = 0; i < seq.tokens.size(); ++i) {
        if (seq.tokens[i] == VocabLayout::kStageEnd) seq.stage_ends.push_back(i);
    }
    return seq;
}

}  // namespace

TokenSequence beam_search(const NextTokenModel& model,
                          const TokenSequence& prefix,
                          const BeamConfig& config) {
    if (config.width < 1) throw ValidationError("beam width must be >= 1");
    const bool grammar_mode = !config.mask;

    Candidate root;
    root.tokens = prefix.tokens;
    if (grammar_mode) {
        for (Token t : prefix.tokens) root.gstate.advance(t);
    }
    std::vector<Candidate> pool{std::move(root)};

    std::vector<double> p(VocabLayout::kVocabSize);
    std::vector<std::uint8_t> mask(VocabLayout::kVocabSize);

    for (int round = 0; round < config.max_new_tokens; ++round) {
        std::sort(pool.begin(), pool.end(), better);
        if (pool.front().finished) return to_sequence(pool.front());

        std::vector<Candidate> next;
        for (const auto& cand : pool) {
            if (cand.finished) {
                next.push_back(cand);
                continue;
            }
            model.probs(cand.tokens, p);
            if (grammar_mode) {
                cand.gstate.allowed_mask(mask);
            } else {
                config.mask(cand.tokens, mask);
            }
            double sum = 0.0;
            for (std::size_t t = 0; t < p.size(); ++t) {
                if (mask[t]) sum += p[t];
            }
            if (sum <= 0.0) {
                throw RuntimeFailure(
                    "no probability mass on grammar-allowed tokens");
            }
            std::vector<std::pair<double, Token>> scored;
            for (std::size_t t = 0; t < p.size(); ++t) {
                if (mask[t] && p[t] > 0.0) {
                    scored.emplace_back(p[t] / sum, static_cast<Token>(t));
                }
            }
            std::sort(scored.begin(), scored.end(),
                      [](const auto& a, const auto& b) {
                          if (a.first != b.first) return a.first > b.first;
                          return a.second < b.second;
                      });
            const auto take = std::min<std::size_t>(
                scored.size(), static_cast<std::size_t>(config.width));
            for (std::size_t i = 0; i < take; ++i) {
                Candidate c = cand;
                c.tokens.push_back(scored[i].second);
                c.score += std::log(scored[i].first);
                if (grammar_mode) c.gstate.advance(scored[i].second);
                c.finished = scored[i].second == VocabLayout::kSeqEnd;
                next.push_back(std::move(c));
            }
        }
        std::sort(next.begin(), next.end(), better);
        if (static_cast<int>(next.size()) > config.width) {
            next.resize(static_cast<std::size_t>(config.width));
        }
        pool = std::move(next);
    }

    std::sort(pool.begin(), pool.end(), better);
    for (const auto& cand : pool) {
        if (!cand.finished) {
            throw BeamTimeoutError(
                "beam search hit the token budget with no finished candidate",
                to_sequence(cand));
        }
    }
    return to_sequence(pool.front());
}

std::vector<PlanStep> decode_plan(const TokenSequence& sequence,
                                  int start_stage) {
    std::string err;
    if (!codec::validate_sequence(sequence.tokens, &err)) {
        throw ValidationError("decode_plan on invalid sequence: " + err);
    }
    const auto& layout = VocabLayout::standard();
    const auto& toks = sequence.tokens;
    std::size_t i = supervised_start(toks);

    std::vector<PlanStep> steps;
    int stage = start_stage;
    while (toks[i] != VocabLayout::kSeqEnd) {
        PlanStep step;
        step.stage_index = stage++;
        ++i;  // BOT
        std::size_t text_start = i;
        while (toks[i] != VocabLayout::kEot) ++i;
        step.subtask = detokenize_text(
            layout, std::span<const Token>(toks.data() + text_start,
                                           i - text_start));
        ++i;  // EOT
        for (int view = 0; view < 2; ++view) {
            ++i;  // BOI
            step.goal[static_cast<std::size_t>(view)] = codec::detokenize_raster(
                std::span<const Token>(toks.data() + i, world::kCells), view);
            i += world::kCells;
            ++i;  // EOI
        }
        ++i;  // STAGE_END
        steps.push_back(std::move(step));
    }
    return steps;
}

}  // namespace desk::planner
