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

#include "deskstack/codec.hpp"

#include <algorithm>
#include <cctype>
#include <sstream>
#include <unordered_map>

#include <json.hpp>

#include "binary_io.hpp"

namespace desk::codec {

namespace {

// Normalized-text alphabet for the byte fallback: a-z, 0-9, then the word
// separator. Remaining slots up to 48 stay reserved.
constexpr int kFallbackLetters = 26;
constexpr int kFallbackDigits = 10;
constexpr int kFallbackSpaceSlot = kFallbackLetters + kFallbackDigits;  // 36

int fallback_slot(char c) {
    if (c >= 'a' && c <= 'z') return c - 'a';
    if (c >= '0' && c <= '9') return kFallbackLetters + (c - '0');
    if (c == ' ') return kFallbackSpaceSlot;
    return -1;
}

char fallback_char(int slot) {
    if (slot < kFallbackLetters) return static_cast<char>('a' + slot);
    if (slot < kFallbackSpaceSlot) {
        return static_cast<char>('0' + slot - kFallbackLetters);
    }
    if (slot == kFallbackSpaceSlot) return ' ';
    throw ValidationError("reserved fallback slot " + std::to_string(slot));
}

const char* const kWordList[] = {
    // object names
    "egg", "can", "apple", "milk", "bread", "banana", "grape", "lemon",
    "pear", "mango", "bottle", "cup", "bagel", "donut", "box", "soap",
    // skill and instruction vocabulary
    "approach", "the", "pick", "up", "place", "onto", "plate", "put", "on",
    "move", "to", "adjust", "gripper", "close", "open", "and", "grasp",
    "lift", "then", "down", "table", "near", "release", "hold", "carry",
    "drop", "reach", "lower", "raise", "stop", "push", "pull", "slide",
    "rotate", "press", "stack", "align", "hover", "retreat", "descend",
    // general filler so templated variations stay in vocabulary
    "a", "an", "of", "in", "with", "left", "right", "red", "green", "blue",
    "yellow", "white", "black", "small", "large", "object", "target",
    "task", "robot", "arm", "hand", "go", "now", "slowly", "carefully",
    "next", "first", "second", "third", "last", "one", "two", "three",
    "four", "five", "from", "at", "by", "it", "this", "that", "into",
    "over", "under", "behind", "front", "top", "bottom", "center", "side",
    "edge", "corner", "area", "spot", "point", "step", "stage", "goal",
    "image", "view", "head", "wrist", "camera", "scene", "cloth",
    "pattern", "color", "shape", "size", "round", "square", "toward",
    "away", "back", "forward", "again", "done", "finish", "start", "begin",
    "end", "wait",
};

}  // namespace

const VocabLayout& VocabLayout::standard() {
    static const VocabLayout layout = [] {
        VocabLayout l;
        for (const char* w : kWordList) l.words.emplace_back(w);
        if (l.words.size() > kWordCapacity) {
            throw ValidationError("word list exceeds vocabulary capacity");
        }
        return l;
    }();
    return layout;
}

int VocabLayout::word_id(std::string_view word) const {
    for (std::size_t i = 0; i < words.size(); ++i) {
        if (words[i] == word) return static_cast<int>(kTextBase + i);
    }
    return -1;
}

std::uint64_t VocabLayout::digest() const {
    std::uint64_t h = fnv1a64("deskstack-vocab-v1");
    const std::uint32_t meta[] = {kControlCount, kTextBase, kWordCapacity,
                                  kFallbackBase, kFallbackCount, kImageBase,
                                  kImageCount, kVocabSize,
                                  static_cast<std::uint32_t>(words.size())};
    h = fnv1a64(meta, sizeof meta, h);
    for (const auto& w : words) {
        h = fnv1a64(std::string_view(w), h);
        h = fnv1a64(std::string_view("\n"), h);
    }
    return h;
}

std::string VocabLayout::export_table() const {
    nlohmann::json j;
    j["control"] = {{"bos", kBos},         {"seq_end", kSeqEnd},
                    {"bot", kBot},         {"eot", kEot},
                    {"boi_head", kBoiHead},{"boi_wrist", kBoiWrist},
                    {"eoi", kEoi},         {"stage_end", kStageEnd},
                    {"pad", kPad}};
    j["text"] = {{"base", kTextBase},
                 {"word_capacity", kWordCapacity},
                 {"fallback_base", kFallbackBase},
                 {"fallback_count", kFallbackCount}};
    j["image"] = {{"base", kImageBase}, {"count", kImageCount}};
    j["vocab_size"] = kVocabSize;
    j["words"] = words;
    j["digest"] = digest();
    return j.dump(2);
}

std::string normalize_text(std::string_view s) {
    std::string out;
    bool pending_space = false;
    for (char raw : s) {
        char c = static_cast<char>(
            std::tolower(static_cast<unsigned char>(raw)));
        if (!((c >= 'a' && c <= 'z') || (c >= '0' && c <= '9'))) {
            pending_space = !out.empty();
            continue;
        }
        if (pending_space) {
            out.push_back(' ');
            pending_space = false;
        }
        out.push_back(c);
    }
    return out;
}

std::vector<Token> tokenize_text(const VocabLayout& layout,
                                 std::string_view s) {
    const std::string norm = normalize_text(s);
    std::vector<Token> out;
    std::size_t i = 0;
    bool prev_was_fallback = false;
    while (i < norm.size()) {
        std::size_t j = norm.find(' ', i);
        if (j == std::string::npos) j = norm.size();
        const std::string_view word(norm.data() + i, j - i);
        const int id = layout.word_id(word);
        if (id >= 0) {
            out.push_back(static_cast<Token>(id));
            prev_was_fallback = false;
        } else {
            if (prev_was_fallback) {
                out.push_back(VocabLayout::kFallbackBase + kFallbackSpaceSlot);
            }
            for (char c : word) {
                out.push_back(VocabLayout::kFallbackBase +
                              static_cast<Token>(fallback_slot(c)));
            }
            prev_was_fallback = true;
        }
        i = j + 1;
    }
    return out;
}

std::string detokenize_text(const VocabLayout& layout,
                            std::span<const Token> tokens) {
    std::vector<std::string> words;
    std::string fallback;
    bool in_fallback = false;
    auto flush = [&] {
        if (in_fallback) {
            words.push_back(fallback);
            fallback.clear();
            in_fallback = false;
        }
    };
    for (std::size_t i = 0; i < tokens.size(); ++i) {
        const Token t = tokens[i];
        if (VocabLayout::is_word(t)) {
            flush();
            const std::size_t idx = t - VocabLayout::kTextBase;
            if (idx >= layout.words.size()) {
                throw ValidationError("position " + std::to_string(i) +
                                      " is an unassigned word token");
            }
            words.push_back(layout.words[idx]);
        } else if (VocabLayout::is_fallback(t)) {
            const char c = fallback_char(
                static_cast<int>(t - VocabLayout::kFallbackBase));
            if (c == ' ') {
                flush();
                in_fallback = true;  // separator between fallback words
            } else {
                in_fallback = true;
                fallback.push_back(c);
            }
        } else {
            throw ValidationError("position " + std::to_string(i) +
                                  " not a text token");
        }
    }
    flush();
    std::string out;
    for (std::size_t i = 0; i < words.size(); ++i) {
        if (i > 0) out.push_back(' ');
        out += words[i];
    }
    return out;
}

std::array<Token, world::kCells> tokenize_raster(const world::Raster& raster) {
    std::array<Token, world::kCells> out;
    for (int i = 0; i < world::kCells; ++i) {
        const auto code = raster.grid[static_cast<std::size_t>(i)];
        if (code >= VocabLayout::kImageCount) {
            throw ValidationError("palette code " + std::to_string(code) +
                                  " exceeds image token range");
        }
        out[static_cast<std::size_t>(i)] = VocabLayout::kImageBase + code;
    }
    return out;
}

world::Raster detokenize_raster(std::span<const Token> tokens, int view_id) {
    if (tokens.size() != world::kCells) {
        throw ValidationError("raster needs exactly 256 tokens, got " +
                              std::to_string(tokens.size()));
    }
    world::Raster r;
    r.view_id = view_id;
    for (std::size_t i = 0; i < tokens.size(); ++i) {
        if (!VocabLayout::is_image(tokens[i])) {
            throw ValidationError("position " + std::to_string(i) +
                                  " not an image token");
        }
        r.grid[i] =
            static_cast<std::uint8_t>(tokens[i] - VocabLayout::kImageBase);
    }
    return r;
}

GrammarState::GrammarState() = default;

std::size_t GrammarState::min_completion() const {
    constexpr std::size_t kImgBlock = 258;  // BOI + 256 image tokens + EOI
    const auto span_rest = [this] {
        // tokens left in the current image block: pending BOI counts too
        if (span_count_ < 0) return kImgBlock;
        return static_cast<std::size_t>(256 - span_count_) + 1;
    };
    switch (phase_) {
        case Phase::kExpectBos:
            return 1 + 2 * kImgBlock + 2 + 1;  // BOS, context, BOT EOT, SEQ_END
        case Phase::kExpectCtxBoiHead:
            return 2 * kImgBlock + 2 + 1;
        case Phase::kCtxHeadImg:
            return span_rest() + kImgBlock + 2 + 1;
        case Phase::kExpectCtxBoiWrist:
            return kImgBlock + 2 + 1;
        case Phase::kCtxWristImg:
            return span_rest() + 2 + 1;
        case Phase::kExpectInstrBot:
            return 2 + 1;
        case Phase::kInstrText:
            return 1 + 1;  // EOT SEQ_END
        case Phase::kExpectStageBotOrSeqEnd:
            return 1;  // SEQ_END
        case Phase::kStageText:
            return 1 + 2 * kImgBlock + 1 + 1;  // EOT, goals, STAGE_END, SEQ_END
        case Phase::kStageHeadImg:
            return span_rest() + kImgBlock + 1 + 1;
        case Phase::kExpectStageBoiWrist:
            return kImgBlock + 1 + 1;
        case Phase::kStageWristImg:
            return span_rest() + 1 + 1;
        case Phase::kExpectStageEnd:
            return 1 + 1;
        case Phase::kDone:
            return 0;
    }
    return 0;
}

bool GrammarState::accepts(Token t) const {
    if (t >= VocabLayout::kVocabSize) return false;
    const auto fits = [&](std::size_t extra) {
        return position_ + extra <= kMaxSequenceLen;
    };
    switch (phase_) {
        case Phase::kExpectBos:
            return t == VocabLayout::kBos;
        case Phase::kExpectCtxBoiHead:
            return t == VocabLayout::kBoiHead;
        case Phase::kCtxHeadImg:
        case Phase::kCtxWristImg:
        case Phase::kStageHeadImg:
        case Phase::kStageWristImg:
            if (span_count_ < 0) return t == VocabLayout::kBoiHead;
            if (span_count_ < 256) return VocabLayout::is_image(t);
            return t == VocabLayout::kEoi;
        case Phase::kExpectCtxBoiWrist:
            return t == VocabLayout::kBoiWrist;
        case Phase::kExpectInstrBot:
            return t == VocabLayout::kBot;
        case Phase::kInstrText:
            if (t == VocabLayout::kEot) return true;
            return VocabLayout::is_text(t) && fits(1 + 2);
        case Phase::kExpectStageBotOrSeqEnd:
            if (t == VocabLayout::kSeqEnd) return true;
            return t == VocabLayout::kBot &&
                   images_used_ + 2 <= kMaxImagesPerSequence && fits(1 + 519);
        case Phase::kStageText:
            if (t == VocabLayout::kEot) return true;
            return VocabLayout::is_text(t) && fits(1 + min_completion());
        case Phase::kExpectStageBoiWrist:
            return t == VocabLayout::kBoiWrist;
        case Phase::kExpectStageEnd:
            return t == VocabLayout::kStageEnd;
        case Phase::kDone:
            return false;
    }
    return false;
}

void GrammarState::advance(Token t) {
    if (!accepts(t)) {
        throw ValidationError("token " + std::to_string(t) +
                              " violates the sequence grammar at position " +
                              std::to_string(position_));
    }
    switch (phase_) {
        case Phase::kExpectBos:
            phase_ = Phase::kExpectCtxBoiHead;
            break;
        case Phase::kExpectCtxBoiHead:
            phase_ = Phase::kCtxHeadImg;
            span_count_ = 0;
            break;
        case Phase::kCtxHeadImg:
            if (t == VocabLayout::kEoi) {
                ++images_used_;
                phase_ = Phase::kExpectCtxBoiWrist;
            } else {
                ++span_count_;
            }
            break;
        case Phase::kExpectCtxBoiWrist:
            phase_ = Phase::kCtxWristImg;
            span_count_ = 0;
            break;
        case Phase::kCtxWristImg:
            if (t == VocabLayout::kEoi) {
                ++images_used_;
                phase_ = Phase::kExpectInstrBot;
            } else {
                ++span_count_;
            }
            break;
        case Phase::kExpectInstrBot:
            phase_ = Phase::kInstrText;
            break;
        case Phase::kInstrText:
            if (t == VocabLayout::kEot) phase_ = Phase::kExpectStageBotOrSeqEnd;
            break;
        case Phase::kExpectStageBotOrSeqEnd:
            phase_ = (t == VocabLayout::kSeqEnd) ? Phase::kDone
                                                 : Phase::kStageText;
            break;
        case Phase::kStageText:
            if (t == VocabLayout::kEot) {
                phase_ = Phase::kStageHeadImg;
                span_count_ = -1;  // next token must be BOI_HEAD
            }
            break;
        case Phase::kStageHeadImg:
            if (span_count_ < 0) {
                span_count_ = 0;  // consumed BOI_HEAD
            } else if (t == VocabLayout::kEoi) {
                ++images_used_;
                phase_ = Phase::kExpectStageBoiWrist;
            } else {
                ++span_count_;
            }
            break;
        case Phase::kExpectStageBoiWrist:
            phase_ = Phase::kStageWristImg;
            span_count_ = 0;
            break;
        case Phase::kStageWristImg:
            if (t == VocabLayout::kEoi) {
                ++images_used_;
                phase_ = Phase::kExpectStageEnd;
            } else {
                ++span_count_;
            }
            break;
        case Phase::kExpectStageEnd:
            phase_ = Phase::kExpectStageBotOrSeqEnd;
            break;
        case Phase::kDone:
            break;
    }
    ++position_;
}

void GrammarState::allowed_mask(std::span<std::uint8_t> mask) const {
    if (mask.size() != VocabLayout::kVocabSize) {
        throw ValidationError("mask must cover the full vocabulary");
    }
    std::fill(mask.begin(), mask.end(), std::uint8_t{0});
    switch (phase_) {
        case Phase::kCtxHeadImg:
        case Phase::kCtxWristImg:
        case Phase::kStageHeadImg:
        case Phase::kStageWristImg:
            if (phase_ == Phase::kStageHeadImg && span_count_ < 0) {
                mask[VocabLayout::kBoiHead] = 1;
                return;
            }
            if (span_count_ < 256) {
                for (Token t = VocabLayout::kImageBase;
                     t < VocabLayout::kVocabSize; ++t) {
                    mask[t] = 1;
                }
            } else {
                mask[VocabLayout::kEoi] = 1;
            }
            return;
        case Phase::kInstrText:
        case Phase::kStageText:
            for (Token t = VocabLayout::kTextBase; t < VocabLayout::kImageBase;
                 ++t) {
                if (accepts(t)) mask[t] = 1;
            }
            mask[VocabLayout::kEot] = 1;
            return;
        default:
            for (Token t = 0; t < VocabLayout::kControlCount; ++t) {
                if (accepts(t)) mask[t] = 1;
            }
            return;
    }
}

bool validate_sequence(std::span<const Token> tokens, std::string* error) {
    GrammarState state;
    for (std::size_t i = 0; i < tokens.size(); ++i) {
        if (!state.accepts(tokens[i])) {
            if (error != nullptr) {
                *error = "token " + std::to_string(tokens[i]) +
                         " rejected at position " + std::to_string(i);
            }
            return false;
        }
        state.advance(tokens[i]);
    }
    if (!state.complete()) {
        if (error != nullptr) *error = "sequence ends before SEQ_END";
        return false;
    }
    return true;
}

std::vector<std::uint8_t> grammar_mask(std::span<const Token> history) {
    GrammarState state;
    for (Token t : history) state.advance(t);
    std::vector<std::uint8_t> mask(VocabLayout::kVocabSize, 0);
    state.allowed_mask(mask);
    return mask;
}

namespace {

void append_raster(std::vector<Token>& out, const world::Raster& raster,
                   Token boi) {
    out.push_back(boi);
    const auto toks = tokenize_raster(raster);
    out.insert(out.end(), toks.begin(), toks.end());
    out.push_back(VocabLayout::kEoi);
}

void append_text(std::vector<Token>& out, const VocabLayout& layout,
                 std::string_view text) {
    out.push_back(VocabLayout::kBot);
    const auto toks = tokenize_text(layout, text);
    out.insert(out.end(), toks.begin(), toks.end());
    out.push_back(VocabLayout::kEot);
}

}  // namespace

TokenSequence assemble(const world::Episode& episode,
                       const milestone::MilestonePlan& plan, int start_stage,
                       int context_frame) {
    plan.validate(episode.length());
    const int stages = plan.stage_count();
    if (start_stage < 0 || start_stage >= stages) {
        throw ValidationError("start stage " + std::to_string(start_stage) +
                              " outside plan with " + std::to_string(stages) +
                              " stages");
    }
    if (context_frame < 0) {
        context_frame =
            plan.segments[static_cast<std::size_t>(start_stage)].from;
    }
    if (context_frame >= episode.length()) {
        throw ValidationError("context frame outside episode");
    }

    const int images = 2 + 2 * (stages - start_stage);
    if (images > kMaxImagesPerSequence) {
        throw ValidationError("sequence needs " + std::to_string(images) +
                              " images but the budget is " +
                              std::to_string(kMaxImagesPerSequence));
    }

    const auto& layout = VocabLayout::standard();
    TokenSequence seq;
    seq.tokens.push_back(VocabLayout::kBos);
    const auto& ctx = episode.rasters[static_cast<std::size_t>(context_frame)];
    append_raster(seq.tokens, ctx[0], VocabLayout::kBoiHead);
    append_raster(seq.tokens, ctx[1], VocabLayout::kBoiWrist);
    append_text(seq.tokens, layout, episode.instruction);

    for (int i = start_stage; i < stages; ++i) {
        const auto& seg = plan.segments[static_cast<std::size_t>(i)];
        append_text(seq.tokens, layout, seg.subtask);
        const auto& head_goal =
            episode.rasters[static_cast<std::size_t>(seg.goal_frame[0])][0];
        const auto& wrist_goal =
            episode.rasters[static_cast<std::size_t>(seg.goal_frame[1])][1];
        append_raster(seq.tokens, head_goal, VocabLayout::kBoiHead);
        append_raster(seq.tokens, wrist_goal, VocabLayout::kBoiWrist);
        seq.tokens.push_back(VocabLayout::kStageEnd);
        seq.stage_ends.push_back(seq.tokens.size() - 1);
    }
    seq.tokens.push_back(VocabLayout::kSeqEnd);

    if (seq.tokens.size() > kMaxSequenceLen) {
        throw ValidationError("sequence needs " +
                              std::to_string(seq.tokens.size()) +
                              " tokens but the budget is " +
                              std::to_string(kMaxSequenceLen));
    }
    return seq;
}

TokenSequence make_plan_prefix(const std::array<world::Raster, 2>& observation,
                               std::string_view instruction) {
    TokenSequence seq;
    seq.tokens.push_back(VocabLayout::kBos);
    append_raster(seq.tokens, observation[0], VocabLayout::kBoiHead);
    append_raster(seq.tokens, observation[1], VocabLayout::kBoiWrist);
    append_text(seq.tokens, VocabLayout::standard(), instruction);
    return seq;
}

Window sample_window(const world::Episode& episode,
                     const milestone::MilestonePlan& plan, Rng& rng) {
    plan.validate(episode.length());
    const int stages = plan.stage_count();
    const auto pick =
        static_cast<int>(rng.uniform_int(0, stages - 1));
    const int goal_frame =
        plan.segments[static_cast<std::size_t>(pick)].goal_frame[0];
    const int jitter = static_cast<int>(rng.uniform_int(-world::kHz, world::kHz));
    const int start = std::clamp(goal_frame + jitter, 0, episode.length() - 1);
    return {start, plan.stage_of_frame(start)};
}

namespace {
constexpr char kVstqMagic[4] = {'V', 'S', 'T', 'Q'};
constexpr std::uint16_t kVstqVersion = 1;
}  // namespace

void write_sequences(const std::filesystem::path& path,
                     std::span<const TokenSequence> sequences,
                     const VocabLayout& layout) {
    for (const auto& s : sequences) {
        std::string err;
        if (!validate_sequence(s.tokens, &err)) {
            throw ValidationError("refusing to write invalid sequence: " + err);
        }
    }
    binio::Writer w(path.string());
    w.bytes(kVstqMagic, 4);
    w.u16(kVstqVersion);
    w.u64(layout.digest());
    w.u32(static_cast<std::uint32_t>(sequences.size()));
    for (const auto& s : sequences) {
        w.u32(static_cast<std::uint32_t>(s.tokens.size()));
        for (Token t : s.tokens) w.u32(t);
    }
    w.close();
}

std::vector<TokenSequence> read_sequences(const std::filesystem::path& path,
                                          const VocabLayout& layout) {
    binio::Reader r(path.string());
    char magic[4];
    r.bytes(magic, 4);
    if (std::memcmp(magic, kVstqMagic, 4) != 0) {
        throw ValidationError("not a VSTQ file: " + path.string());
    }
    const auto version = r.u16();
    if (version != kVstqVersion) {
        throw ValidationError("unsupported VSTQ version " +
                              std::to_string(version));
    }
    if (r.u64() != layout.digest()) {
        throw ValidationError("vocabulary layout mismatch in " + path.string());
    }
    const auto count = r.u32();
    std::vector<TokenSequence> out;
    out.reserve(count);
    for (std::uint32_t i = 0; i < count; ++i) {
        const auto len = r.u32();
        TokenSequence seq;
        seq.tokens.reserve(len);
        for (std::uint32_t k = 0; k < len; ++k) {
            const Token t = r.u32();
            if (t >= VocabLayout::kVocabSize) {
                throw ValidationError(
                    "token out of range at byte offset " +
                    std::to_string(r.offset() - 4) + " in " + path.string());
            }
            if (t == VocabLayout::kStageEnd) {
                seq.stage_ends.push_back(seq.tokens.size());
            }
            seq.tokens.push_back(t);
        }
        out.push_back(std::move(seq));
    }
    return out;
}

}  // namespace desk::codec
