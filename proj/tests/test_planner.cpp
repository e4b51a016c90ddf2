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

#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <map>

#include "deskstack/planner.hpp"
#include "support/oracles.hpp"

using namespace desk;
using namespace desk::planner;
using codec::VocabLayout;

namespace {

struct LabeledEp {
    world::Episode episode;
    milestone::MilestonePlan plan;
};

LabeledEp labeled_expert(std::uint64_t scenario_seed, std::uint64_t seed) {
    const auto scenarios =
        world::gen_scenarios(world::ScenarioKind::kInDomain, 1, scenario_seed);
    LabeledEp out;
    out.episode = world::scripted_expert(scenarios[0], seed);
    milestone::RuleAnnotator annotator;
    out.plan = milestone::label_episode(out.episode, annotator);
    return out;
}

std::vector<TokenSequence> packed_corpus(int episodes, std::uint64_t seed) {
    std::vector<TokenSequence> corpus;
    Rng rng(seed);
    for (int i = 0; i < episodes; ++i) {
        const auto le = labeled_expert(3000 + static_cast<std::uint64_t>(i),
                                       seed + static_cast<std::uint64_t>(i));
        const auto w = codec::sample_window(le.episode, le.plan, rng);
        corpus.push_back(codec::assemble(le.episode, le.plan, w.start_stage,
                                         w.start_timestamp));
    }
    return corpus;
}

class UniformModel : public NextTokenModel {
  public:
    void probs(std::span<const Token>, std::span<double> out) const override {
        std::fill(out.begin(), out.end(),
                  1.0 / static_cast<double>(VocabLayout::kVocabSize));
    }
};

// History-keyed toy distribution for hand-built decoding instances.
class ToyModel : public NextTokenModel {
  public:
    std::map<std::vector<Token>, std::map<Token, double>> table;

    void probs(std::span<const Token> history,
               std::span<double> out) const override {
        std::fill(out.begin(), out.end(), 0.0);
        const std::vector<Token> key(history.begin(), history.end());
        const auto it = table.find(key);
        if (it == table.end()) {
            out[VocabLayout::kSeqEnd] = 1.0;
            return;
        }
        for (const auto& [t, p] : it->second) out[t] = p;
    }
};

constexpr Token kA = 100, kB = 101, kC = 102, kEos = VocabLayout::kSeqEnd;

MaskFn open_mask(std::vector<Token> alphabet, int force_eos_after = -1) {
    return [alphabet, force_eos_after](std::span<const Token> history,
                                       std::span<std::uint8_t> mask) {
        std::fill(mask.begin(), mask.end(), std::uint8_t{0});
        if (force_eos_after >= 0 &&
            static_cast<int>(history.size()) >= force_eos_after) {
            mask[kEos] = 1;
            return;
        }
        for (Token t : alphabet) mask[t] = 1;
    };
}

}  // namespace

TEST_CASE("cross entropy of the uniform model is log vocab size") {
    const auto le = labeled_expert(50, 1);
    const auto seq = codec::assemble(le.episode, le.plan, 0);
    UniformModel model;
    const auto ce = ce_loss(model, seq);
    CHECK(ce.loss == doctest::Approx(std::log(2128.0)).epsilon(1e-12));
    CHECK(ce.positions == seq.size() - supervised_start(seq.tokens));
}

TEST_CASE("supervised positions start right after the instruction") {
    const auto le = labeled_expert(51, 2);
    const auto seq = codec::assemble(le.episode, le.plan, 0);
    const auto start = supervised_start(seq.tokens);
    CHECK(seq.tokens[start - 1] == VocabLayout::kEot);
    CHECK(seq.tokens[start] == VocabLayout::kBot);
    for (std::size_t i = 0; i < start - 1; ++i) {
        CHECK(seq.tokens[i] != VocabLayout::kEot);
    }
}

TEST_CASE("count model cross entropy equals its table entropy on the corpus") {
    const auto corpus = packed_corpus(5, 77);
    CountModel model(4, 0.0);
    model.train(corpus);

    double total_loss = 0.0;
    std::size_t total_positions = 0;
    for (const auto& seq : corpus) {
        const auto ce = ce_loss(model, seq);
        total_loss += ce.loss * static_cast<double>(ce.positions);
        total_positions += ce.positions;
    }
    const double mean = total_loss / static_cast<double>(total_positions);
    CHECK(mean == doctest::Approx(model.table_entropy()).epsilon(1e-9));
}

TEST_CASE("count model raises on out-of-distribution contexts in exact mode") {
    const auto corpus = packed_corpus(2, 78);
    CountModel model(0, 0.0);  // unbounded context
    model.train(corpus);
    const auto other = packed_corpus(1, 999);
    CHECK_THROWS_WITH_AS(ce_loss(model, other[0]),
                         doctest::Contains("zero predicted probability"),
                         ValidationError);
}

TEST_CASE("model outputs are normalized distributions") {
    const auto corpus = packed_corpus(2, 79);
    std::vector<double> p(VocabLayout::kVocabSize);

    CountModel smoothed(4, 0.5);
    smoothed.train(corpus);
    ContextMlpModel mlp;

    Rng rng(3);
    for (int trial = 0; trial < 20; ++trial) {
        const auto& seq = corpus[static_cast<std::size_t>(trial) % 2];
        const auto k = static_cast<std::size_t>(
            rng.uniform_int(1, static_cast<std::int64_t>(seq.size()) - 1));
        const std::span<const Token> hist(seq.tokens.data(), k);

        smoothed.probs(hist, p);
        double sum = 0.0;
        for (double v : p) {
            sum += v;
            CHECK(v >= 0.0);
        }
        CHECK(sum == doctest::Approx(1.0).epsilon(1e-9));

        mlp.probs(hist, p);
        sum = 0.0;
        for (double v : p) sum += v;
        CHECK(sum == doctest::Approx(1.0).epsilon(1e-9));
    }
}

TEST_CASE("context MLP analytic gradients match central finite differences") {
    ContextMlpModel model;
    ContextMlpNet<double> net;  // 64-bit replica
    net.copy_from(model.net());

    const auto le = labeled_expert(52, 3);
    const auto seq = codec::assemble(le.episode, le.plan, 2);
    const auto start = supervised_start(seq.tokens);

    nn::GradBuffer grads;
    for (auto n : net.grad_shapes()) grads.slots.emplace_back(n, 0.0);
    const std::size_t positions[] = {start, start + 3, start + 20};
    auto loss_at = [&](const ContextMlpNet<double>& m) {
        std::vector<double> p(VocabLayout::kVocabSize);
        double loss = 0.0;
        for (auto k : positions) {
            m.forward(std::span<const Token>(seq.tokens.data(), k), p);
            loss += -std::log(p[seq.tokens[k]]);
        }
        return loss;
    };
    for (auto k : positions) {
        net.position_grad(std::span<const Token>(seq.tokens.data(), k),
                          seq.tokens[k], grads);
    }

    std::vector<double*> slot_data = {
        net.embedding.data(), net.fc1.w.data(), net.fc1.b.data(),
        net.fc2.w.data(),     net.fc2.b.data(), net.fc3.w.data(),
        net.fc3.b.data()};

    Rng rng(7);
    const double h = 1e-3;
    double worst = 0.0;
    int checked = 0;
    while (checked < 60) {
        const auto slot = static_cast<std::size_t>(rng.uniform_int(0, 6));
        const auto idx = static_cast<std::size_t>(rng.uniform_int(
            0, static_cast<std::int64_t>(grads.slots[slot].size()) - 1));
        const double analytic = grads.slots[slot][idx];
        if (std::fabs(analytic) < 1e-7) continue;  // avoid 0/0 comparisons

        double* param = slot_data[slot] + idx;
        const double saved = *param;
        *param = saved + h;
        const double up = loss_at(net);
        *param = saved - h;
        const double down = loss_at(net);
        *param = saved;
        const double fd = (up - down) / (2.0 * h);
        const double rel =
            std::fabs(fd - analytic) /
            std::max({std::fabs(fd), std::fabs(analytic), 1e-12});
        worst = std::max(worst, rel);
        ++checked;
    }
    CHECK(checked == 60);
    CHECK(worst <= 1e-4);
}

TEST_CASE("count model training is a single repeatable pass") {
    const auto corpus = packed_corpus(3, 80);
    CountModel a(4, 0.0), b(4, 0.0);
    a.train(corpus);
    b.train(corpus);
    std::vector<double> pa(VocabLayout::kVocabSize),
        pb(VocabLayout::kVocabSize);
    const auto& seq = corpus[0];
    for (std::size_t k = supervised_start(seq.tokens); k < seq.size(); ++k) {
        a.probs(std::span<const Token>(seq.tokens.data(), k), pa);
        b.probs(std::span<const Token>(seq.tokens.data(), k), pb);
        REQUIRE(pa == pb);
    }
}

TEST_CASE("MLP training memorizes a repeated sequence") {
    const auto le = labeled_expert(53, 4);
    // a short tail window keeps this unit test fast
    const auto seq = codec::assemble(le.episode, le.plan, 2);
    std::vector<TokenSequence> corpus{seq};

    ContextMlpModel model;
    TrainConfig cfg;
    cfg.steps = 2000;
    cfg.lr = 0.4;
    cfg.batch = 8;
    cfg.seed = 5;
    const auto result = train(model, corpus, cfg);
    REQUIRE(result.curve.size() == 2000);
    CHECK(result.curve.back() < result.curve.front());

    const auto ce = ce_loss(model, seq);
    CHECK(ce.loss < 0.1);

    SUBCASE("same seed gives an identical curve") {
        ContextMlpModel model2;
        const auto result2 = train(model2, corpus, cfg);
        CHECK(result.curve == result2.curve);
    }
}

TEST_CASE("beam width one is greedy argmax") {
    ToyModel model;
    model.table[{}] = {{kA, 0.6}, {kB, 0.4}};
    model.table[{kA}] = {{kEos, 0.3}, {kA, 0.25}, {kB, 0.25}, {kC, 0.2}};
    model.table[{kB}] = {{kEos, 0.9}, {kA, 0.04}, {kB, 0.03}, {kC, 0.03}};
    model.table[{kA, kA}] = {{kEos, 1.0}};
    model.table[{kA, kB}] = {{kEos, 1.0}};
    model.table[{kA, kC}] = {{kEos, 1.0}};
    model.table[{kB, kA}] = {{kEos, 1.0}};
    model.table[{kB, kB}] = {{kEos, 1.0}};
    model.table[{kB, kC}] = {{kEos, 1.0}};

    BeamConfig cfg;
    cfg.mask = open_mask({kA, kB, kC, kEos});
    cfg.max_new_tokens = 8;
    TokenSequence prefix;

    SUBCASE("greedy follows the locally best token into the 0.18 path") {
        cfg.width = 1;
        const auto out = beam_search(model, prefix, cfg);
        CHECK(out.tokens == std::vector<Token>{kA, kEos});
    }
    SUBCASE("width two recovers the globally best 0.36 path") {
        cfg.width = 2;
        const auto out = beam_search(model, prefix, cfg);
        CHECK(out.tokens == std::vector<Token>{kB, kEos});
        const auto best = oracle::exhaustive_argmax(
            model, {}, std::vector<Token>{kEos, kA, kB, kC}, 3, cfg.mask);
        CHECK(best == out.tokens);
    }
}

namespace {

// Random short-sequence corpus over a 5-token alphabet; decoding instances
// stay enumerable because the mask forces termination.
CountModel random_instance(Rng& rng, std::vector<Token>* alphabet) {
    *alphabet = {kEos, kA, kB, kC, 103};
    std::vector<TokenSequence> shaped;
    const int n = static_cast<int>(rng.uniform_int(5, 20));
    for (int i = 0; i < n; ++i) {
        TokenSequence s;
        // CountModel counts from supervised_start, so shape a tiny prefix
        s.tokens.push_back(VocabLayout::kBot);
        s.tokens.push_back(VocabLayout::kEot);
        const int len = static_cast<int>(rng.uniform_int(0, 4));
        for (int k = 0; k < len; ++k) {
            s.tokens.push_back(
                (*alphabet)[static_cast<std::size_t>(rng.uniform_int(1, 4))]);
        }
        s.tokens.push_back(kEos);
        shaped.push_back(std::move(s));
    }
    CountModel model(3, 0.1);
    model.train(shaped);
    return model;
}

TokenSequence toy_prefix() {
    TokenSequence prefix;
    prefix.tokens = {VocabLayout::kBot, VocabLayout::kEot};
    return prefix;
}

}  // namespace

TEST_CASE("exhaustive-width beam equals global argmax on enumerable models") {
    Rng rng(2718);
    for (int instance = 0; instance < 20; ++instance) {
        std::vector<Token> alphabet;
        const auto model = random_instance(rng, &alphabet);
        BeamConfig cfg;
        cfg.width = 15625;  // 5^6: every candidate survives
        cfg.max_new_tokens = 6;
        cfg.mask = open_mask(alphabet, 2 + 5);  // prefix(2) + 5, then EOS only
        const auto out = beam_search(model, toy_prefix(), cfg);
        const auto best = oracle::exhaustive_argmax(
            model, toy_prefix().tokens, alphabet, 6, cfg.mask);
        CHECK(out.tokens == best);
    }
}

TEST_CASE("beam score is non-decreasing in width on random instances") {
    Rng rng(628);
    auto score_of = [](const CountModel& model, const TokenSequence& seq,
                       const MaskFn& mask_fn) {
        std::vector<double> p(VocabLayout::kVocabSize);
        std::vector<std::uint8_t> mask(VocabLayout::kVocabSize);
        double score = 0.0;
        for (std::size_t k = 2; k < seq.size(); ++k) {
            model.probs(std::span<const Token>(seq.tokens.data(), k), p);
            mask_fn(std::span<const Token>(seq.tokens.data(), k), mask);
            double sum = 0.0;
            for (std::size_t t = 0; t < p.size(); ++t) {
                if (mask[t]) sum += p[t];
            }
            score += std::log(p[seq.tokens[k]] / sum);
        }
        return score;
    };
    for (int instance = 0; instance < 100; ++instance) {
        std::vector<Token> alphabet;
        const auto model = random_instance(rng, &alphabet);
        BeamConfig cfg;
        cfg.max_new_tokens = 8;
        cfg.mask = open_mask(alphabet, 2 + 7);
        double prev = -1e300;
        for (int width : {1, 2, 4, 8, 16}) {
            cfg.width = width;
            const auto out = beam_search(model, toy_prefix(), cfg);
            const double s = score_of(model, out, cfg.mask);
            CHECK(s >= prev - 1e-12);
            prev = s;
        }
    }
}

TEST_CASE("memorizing count model reproduces its corpus under greedy decode") {
    const auto corpus = packed_corpus(5, 81);
    CountModel model(0, 0.0);
    model.train(corpus);

    BeamConfig cfg;
    cfg.width = 1;
    for (const auto& seq : corpus) {
        TokenSequence prefix;
        const auto start = supervised_start(seq.tokens);
        prefix.tokens.assign(
            seq.tokens.begin(),
            seq.tokens.begin() + static_cast<std::ptrdiff_t>(start));
        const auto out = beam_search(model, prefix, cfg);
        CHECK(out.tokens == seq.tokens);
        CHECK(codec::validate_sequence(out.tokens));
    }
}

TEST_CASE("beam search reports a timeout with its best unfinished candidate") {
    const auto corpus = packed_corpus(1, 82);
    CountModel model(0, 0.0);
    model.train(corpus);
    TokenSequence prefix;
    const auto start = supervised_start(corpus[0].tokens);
    prefix.tokens.assign(
        corpus[0].tokens.begin(),
        corpus[0].tokens.begin() + static_cast<std::ptrdiff_t>(start));
    BeamConfig cfg;
    cfg.width = 1;
    cfg.max_new_tokens = 10;
    try {
        beam_search(model, prefix, cfg);
        FAIL("expected a timeout");
    } catch (const BeamTimeoutError& e) {
        CHECK(e.best_unfinished.tokens.size() == prefix.tokens.size() + 10);
    }
}

TEST_CASE("decode_plan inverts assemble") {
    const auto le = labeled_expert(54, 6);
    const auto seq = codec::assemble(le.episode, le.plan, 1);
    const auto steps = decode_plan(seq, 1);
    REQUIRE(steps.size() == 2);
    for (std::size_t i = 0; i < steps.size(); ++i) {
        const auto& seg = le.plan.segments[i + 1];
        CHECK(steps[i].stage_index == static_cast<int>(i) + 1);
        CHECK(steps[i].subtask == codec::normalize_text(seg.subtask));
        const auto& head =
            le.episode.rasters[static_cast<std::size_t>(seg.goal_frame[0])][0];
        const auto& wrist =
            le.episode.rasters[static_cast<std::size_t>(seg.goal_frame[1])][1];
        CHECK(steps[i].goal[0] == head);
        CHECK(steps[i].goal[1] == wrist);
    }

    SUBCASE("zero stage blocks decode to an empty plan") {
        const auto prefix = codec::make_plan_prefix(le.episode.rasters[0],
                                                    le.episode.instruction);
        TokenSequence empty = prefix;
        empty.tokens.push_back(VocabLayout::kSeqEnd);
        CHECK(decode_plan(empty, 0).empty());
    }
}

TEST_CASE("checkpoints round trip both model kinds") {
    const auto dir = std::filesystem::temp_directory_path();
    const auto corpus = packed_corpus(2, 83);

    SUBCASE("context MLP") {
        ContextMlpModel model;
        const auto path = dir / "deskstack_mlp.vstm";
        model.save(path);
        const auto loaded = ContextMlpModel::load(path);
        std::vector<double> pa(VocabLayout::kVocabSize),
            pb(VocabLayout::kVocabSize);
        model.probs(std::span<const Token>(corpus[0].tokens.data(), 600), pa);
        loaded.probs(std::span<const Token>(corpus[0].tokens.data(), 600), pb);
        CHECK(pa == pb);
        CHECK(ckpt::peek_kind(path) == ckpt::ModelKind::kContextMlp);
        std::filesystem::remove(path);
    }
    SUBCASE("count model") {
        CountModel model(0, 0.0);
        model.train(corpus);
        const auto path = dir / "deskstack_count.vstm";
        model.save(path);
        const auto loaded = CountModel::load(path);
        std::vector<double> pa(VocabLayout::kVocabSize),
            pb(VocabLayout::kVocabSize);
        const auto k = supervised_start(corpus[0].tokens);
        model.probs(std::span<const Token>(corpus[0].tokens.data(), k), pa);
        loaded.probs(std::span<const Token>(corpus[0].tokens.data(), k), pb);
        CHECK(pa == pb);
        std::filesystem::remove(path);
    }
    SUBCASE("kind mismatch is rejected") {
        ContextMlpModel model;
        const auto path = dir / "deskstack_kindmix.vstm";
        model.save(path);
        CHECK_THROWS_AS(CountModel::load(path), ValidationError);
        std::filesystem::remove(path);
    }
}
