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

#ifndef DESKSTACK_CODEC_HPP
#define DESKSTACK_CODEC_HPP

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "deskstack/milestone.hpp"
#include "deskstack/world.hpp"

namespace desk::codec {

using Token = std::uint32_t;

// Shared discrete vocabulary: control tokens, a word vocabulary with a
// byte-fallback alphabet, and one token per raster palette code.
struct VocabLayout {
    static constexpr Token kBos = 0;
    static constexpr Token kSeqEnd = 1;
    static constexpr Token kBot = 2;
    static constexpr Token kEot = 3;
    static constexpr Token kBoiHead = 4;
    static constexpr Token kBoiWrist = 5;
    static constexpr Token kEoi = 6;
    static constexpr Token kStageEnd = 7;
    static constexpr Token kPad = 8;

    static constexpr Token kControlCount = 16;
    static constexpr Token kTextBase = 16;
    static constexpr Token kWordCapacity = 2000;
    static constexpr Token kFallbackBase = kTextBase + kWordCapacity;  // 2016
    static constexpr Token kFallbackCount = 48;
    static constexpr Token kImageBase = kFallbackBase + kFallbackCount;  // 2064
    static constexpr Token kImageCount = 64;
    static constexpr Token kVocabSize = kImageBase + kImageCount;  // 2128

    std::vector<std::string> words;  // assigned word slots, id = kTextBase + i

    static const VocabLayout& standard();

    static bool is_control(Token t) { return t < kControlCount; }
    static bool is_text(Token t) { return t >= kTextBase && t < kImageBase; }
    static bool is_word(Token t) { return t >= kTextBase && t < kFallbackBase; }
    static bool is_fallback(Token t) {
        return t >= kFallbackBase && t < kImageBase;
    }
    static bool is_image(Token t) { return t >= kImageBase && t < kVocabSize; }

    int word_id(std::string_view word) const;  // -1 when out of vocabulary
    std::uint64_t digest() const;
    std::string export_table() const;  // JSON, for cross-implementation checks
};

// Lowercases, keeps [a-z0-9], splits words on anything else. In-vocabulary
// words map to word tokens; other words fall back to one token per character
// (the normalized alphabet fits the 48 fallback slots, one of which encodes
// the space between adjacent fallback words). Round trip is exact on the
// normalized text.
std::string normalize_text(std::string_view s);
std::vector<Token> tokenize_text(const VocabLayout& layout, std::string_view s);
std::string detokenize_text(const VocabLayout& layout,
                            std::span<const Token> tokens);

// Row-major, one token per cell: token = image base + palette code.
std::array<Token, world::kCells> tokenize_raster(const world::Raster& raster);
world::Raster detokenize_raster(std::span<const Token> tokens, int view_id);

struct TokenSequence {
    std::vector<Token> tokens;
    std::vector<std::size_t> stage_ends;  // token index of each STAGE_END

    std::size_t size() const { return tokens.size(); }
};

constexpr std::size_t kMaxSequenceLen = 16384;
constexpr int kMaxImagesPerSequence = 16;

// Sequence layout:
//   BOS
//   BOI_HEAD img*256 EOI  BOI_WRIST img*256 EOI        (context frame)
//   BOT text* EOT                                       (instruction)
//   per stage i >= start_stage:
//     BOT text* EOT  BOI_HEAD img*256 EOI  BOI_WRIST img*256 EOI  STAGE_END
//   SEQ_END
TokenSequence assemble(const world::Episode& episode,
                       const milestone::MilestonePlan& plan, int start_stage,
                       int context_frame = -1);

// Decode-time prefix: BOS, the current observation as the context frame,
// and the instruction span. Beam search extends it with stage blocks.
TokenSequence make_plan_prefix(const std::array<world::Raster, 2>& observation,
                               std::string_view instruction);

// Random goal frame among segments, then a start timestamp within +-10 frames
// of it (1 s at 10 Hz), clamped to the episode; the start stage is the
// segment containing the start timestamp.
struct Window {
    int start_timestamp = 0;
    int start_stage = 0;
};
Window sample_window(const world::Episode& episode,
                     const milestone::MilestonePlan& plan, Rng& rng);

// Incremental grammar automaton over the layout above, also used as the
// decode-time mask: allowed() is exactly the set of next tokens from which a
// valid sequence (length and image budget included) remains reachable.
class GrammarState {
  public:
    GrammarState();

    bool accepts(Token t) const;
    void advance(Token t);  // throws ValidationError on an illegal token
    void allowed_mask(std::span<std::uint8_t> mask) const;  // size kVocabSize
    bool complete() const { return phase_ == Phase::kDone; }
    std::size_t position() const { return position_; }

  private:
    enum class Phase {
        kExpectBos,
        kExpectCtxBoiHead,
        kCtxHeadImg,
        kExpectCtxBoiWrist,
        kCtxWristImg,
        kExpectInstrBot,
        kInstrText,
        kExpectStageBotOrSeqEnd,
        kStageText,
        kStageHeadImg,
        kExpectStageBoiWrist,
        kStageWristImg,
        kExpectStageEnd,
        kDone,
    };

    std::size_t min_completion() const;

    Phase phase_ = Phase::kExpectBos;
    int span_count_ = 0;    // image tokens seen in the current span
    int images_used_ = 0;   // completed image spans
    std::size_t position_ = 0;
};

// Whole-sequence validation; returns the index of the first offending token
// (or -1 when valid) so tests can report precisely.
bool validate_sequence(std::span<const Token> tokens,
                       std::string* error = nullptr);

// Allowed-token mask for a grammar-valid prefix.
std::vector<std::uint8_t> grammar_mask(std::span<const Token> history);

// VSTQ container: magic, version, layout digest, then length-prefixed
// little-endian u32 token sequences. Bit-exact round trip.
void write_sequences(const std::filesystem::path& path,
                     std::span<const TokenSequence> sequences,
                     const VocabLayout& layout);
std::vector<TokenSequence> read_sequences(const std::filesystem::path& path,
                                          const VocabLayout& layout);

}  // namespace desk::codec

#endif  // DESKSTACK_CODEC_HPP
