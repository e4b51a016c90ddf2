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

// Independent brute-force oracles used by tests only. These deliberately do
// not share code with the library implementations they check.

#ifndef DESKSTACK_TESTS_SUPPORT_ORACLES_HPP
#define DESKSTACK_TESTS_SUPPORT_ORACLES_HPP

#include <cmath>
#include <functional>
#include <span>
#include <vector>

#include "deskstack/milestone.hpp"
#include "deskstack/planner.hpp"

namespace desk::oracle {

// Point-to-infinite-line distance through the cross product, unlike the
// projection arithmetic in the library.
inline double line_distance(const milestone::Vec3& p, const milestone::Vec3& a,
                            const milestone::Vec3& b) {
    const double vx = b.x - a.x, vy = b.y - a.y, vz = b.z - a.z;
    const double wx = p.x - a.x, wy = p.y - a.y, wz = p.z - a.z;
    const double len2 = vx * vx + vy * vy + vz * vz;
    if (len2 == 0.0) return std::sqrt(wx * wx + wy * wy + wz * wz);
    const double cx = wy * vz - wz * vy;
    const double cy = wz * vx - wx * vz;
    const double cz = wx * vy - wy * vx;
    return std::sqrt((cx * cx + cy * cy + cz * cz) / len2);
}

inline void rdp_brute(std::span<const milestone::Vec3> pts, int lo, int hi,
                      double epsilon, std::vector<int>& kept) {
    double best = 0.0;
    int best_i = -1;
    for (int i = lo + 1; i < hi; ++i) {
        const double d = line_distance(pts[static_cast<std::size_t>(i)],
                                       pts[static_cast<std::size_t>(lo)],
                                       pts[static_cast<std::size_t>(hi)]);
        if (d > best) {
            best = d;
            best_i = i;
        }
    }
    if (best_i >= 0 && best > epsilon) {
        rdp_brute(pts, lo, best_i, epsilon, kept);
        kept.push_back(best_i);
        rdp_brute(pts, best_i, hi, epsilon, kept);
    }
}

inline std::vector<int> rdp_oracle(std::span<const milestone::Vec3> pts,
                                   double epsilon) {
    std::vector<int> kept{0};
    rdp_brute(pts, 0, static_cast<int>(pts.size()) - 1, epsilon, kept);
    kept.push_back(static_cast<int>(pts.size()) - 1);
    return kept;
}

// Exhaustively enumerates every terminated sequence up to max_new new tokens
// over the given candidate alphabet and returns the argmax, scoring with the
// same masked-renormalized left-to-right log accumulation the decoder uses.
inline std::vector<planner::Token> exhaustive_argmax(
    const planner::NextTokenModel& model,
    std::span<const planner::Token> prefix,
    std::span<const planner::Token> alphabet, int max_new,
    const planner::MaskFn& mask_fn) {
    std::vector<planner::Token> best;
    double best_score = -1e300;
    std::vector<double> p(codec::VocabLayout::kVocabSize);
    std::vector<std::uint8_t> mask(codec::VocabLayout::kVocabSize);

    std::function<void(std::vector<planner::Token>&, double, int)> walk =
        [&](std::vector<planner::Token>& seq, double score, int depth) {
            if (!seq.empty() && seq.back() == codec::VocabLayout::kSeqEnd) {
                if (score > best_score ||
                    (score == best_score && seq < best)) {
                    best = seq;
                    best_score = score;
                }
                return;
            }
            if (depth == max_new) return;
            model.probs(seq, p);
            mask_fn(seq, mask);
            double sum = 0.0;
            for (std::size_t t = 0; t < p.size(); ++t) {
                if (mask[t]) sum += p[t];
            }
            for (planner::Token t : alphabet) {
                if (!mask[t] || p[t] <= 0.0) continue;
                seq.push_back(t);
                walk(seq, score + std::log(p[t] / sum), depth + 1);
                seq.pop_back();
            }
        };
    std::vector<planner::Token> seq(prefix.begin(), prefix.end());
    walk(seq, 0.0, 0);
    return best;
}

}  // namespace desk::oracle

#endif  // DESKSTACK_TESTS_SUPPORT_ORACLES_HPP
