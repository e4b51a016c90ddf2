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

#include "deskstack/milestone.hpp"

#include <algorithm>
#include <cmath>
#include <set>

namespace desk::milestone {

namespace {

double perpendicular_distance(const Vec3& p, const Vec3& a, const Vec3& b) {
    const double vx = b.x - a.x, vy = b.y - a.y, vz = b.z - a.z;
    const double wx = p.x - a.x, wy = p.y - a.y, wz = p.z - a.z;
    const double len2 = vx * vx + vy * vy + vz * vz;
    if (len2 == 0.0) {
        return std::sqrt(wx * wx + wy * wy + wz * wz);
    }
    const double t = (wx * vx + wy * vy + wz * vz) / len2;
    const double dx = wx - t * vx, dy = wy - t * vy, dz = wz - t * vz;
    return std::sqrt(dx * dx + dy * dy + dz * dz);
}

void rdp_recurse(std::span<const Vec3> pts, int lo, int hi, double epsilon,
                 std::vector<char>& keep) {
    if (hi - lo < 2) return;
    int best = -1;
    double best_d = 0.0;
    for (int i = lo + 1; i < hi; ++i) {
        const double d = perpendicular_distance(
            pts[static_cast<std::size_t>(i)], pts[static_cast<std::size_t>(lo)],
            pts[static_cast<std::size_t>(hi)]);
        if (d > best_d) {
            best_d = d;
            best = i;
        }
    }
    if (best >= 0 && best_d > epsilon) {
        keep[static_cast<std::size_t>(best)] = 1;
        rdp_recurse(pts, lo, best, epsilon, keep);
        rdp_recurse(pts, best, hi, epsilon, keep);
    }
}

}  // namespace

std::vector<int> rdp_simplify(std::span<const Vec3> points, double epsilon) {
    if (points.size() < 2) {
        throw ValidationError("rdp_simplify needs at least 2 points");
    }
    if (epsilon < 0.0) throw ValidationError("rdp epsilon must be >= 0");
    const int n = static_cast<int>(points.size());
    std::vector<char> keep(points.size(), 0);
    keep.front() = 1;
    keep.back() = 1;
    rdp_recurse(points, 0, n - 1, epsilon, keep);
    std::vector<int> out;
    for (int i = 0; i < n; ++i) {
        if (keep[static_cast<std::size_t>(i)]) out.push_back(i);
    }
    return out;
}

std::vector<int> gripper_transitions(std::span<const float> openness) {
    if (openness.empty()) {
        throw ValidationError("gripper_transitions needs a non-empty signal");
    }
    std::vector<int> out;
    auto open_side = [](float o) { return o > world::kOpenThreshold; };
    for (std::size_t t = 1; t < openness.size(); ++t) {
        if (open_side(openness[t]) != open_side(openness[t - 1])) {
            out.push_back(static_cast<int>(t));
        }
    }
    return out;
}

std::vector<int> candidate_boundaries(const world::Episode& episode,
                                      double epsilon, int merge_window) {
    const int n = episode.length();
    if (n < 2) throw ValidationError("episode too short for boundaries");
    const int last = n - 1;

    std::vector<Vec3> poses;
    std::vector<float> openness;
    poses.reserve(episode.states.size());
    for (const auto& s : episode.states) {
        poses.push_back({s.gx, s.gy, s.gz});
        openness.push_back(s.gripper_open);
    }

    std::set<int> all;
    for (int i : rdp_simplify(poses, epsilon)) all.insert(i);
    for (int i : gripper_transitions(openness)) all.insert(i);

    // Interior candidates within merge_window of each other collapse to the
    // later index; ones hugging an endpoint are absorbed by that endpoint.
    std::vector<int> interior;
    for (int c : all) {
        if (c >= merge_window && c <= last - merge_window) interior.push_back(c);
    }
    std::vector<int> out{0};
    std::size_t i = 0;
    while (i < interior.size()) {
        std::size_t j = i;
        while (j + 1 < interior.size() &&
               interior[j + 1] - interior[j] < merge_window) {
            ++j;
        }
        out.push_back(interior[j]);
        i = j + 1;
    }
    out.push_back(last);
    return out;
}

SkillLibrary SkillLibrary::standard() {
    SkillLibrary lib;
    lib.skills = {
        {kSkillApproach, "approach", "Approach the {obj}"},
        {kSkillPickUp, "pick up", "Pick up the {obj}"},
        {kSkillPlaceOnto, "place onto", "Place the {obj} onto the plate"},
        {kSkillMove, "move", "Move the {obj} to the plate"},
        {kSkillAdjust, "adjust", "Adjust the gripper"},
    };
    return lib;
}

const Skill& SkillLibrary::by_verb(std::string_view verb) const {
    for (const auto& s : skills) {
        if (s.verb == verb) return s;
    }
    throw ValidationError("unknown skill verb: " + std::string(verb));
}

void SkillLibrary::validate() const {
    if (skills.size() > 50) throw ValidationError("skill library exceeds 50");
    for (std::size_t i = 0; i < skills.size(); ++i) {
        if (skills[i].id != static_cast<int>(i)) {
            throw ValidationError("skill ids must be dense from 0");
        }
        for (std::size_t j = i + 1; j < skills.size(); ++j) {
            if (skills[i].verb == skills[j].verb) {
                throw ValidationError("duplicate skill verb");
            }
        }
    }
}

namespace {

struct SegmentSignature {
    bool grasp_crossing = false;
    bool release_crossing = false;
    bool held_throughout = false;
    bool near_target = false;
    bool toward_target = false;
};

SegmentSignature segment_signature(const world::Episode& ep, int from, int to,
                                   std::span<const int> crossings) {
    SegmentSignature sig;
    const int target = ep.target_id();

    for (int t : crossings) {
        if (t >= from && t < to) {  // a segment owns the crossing at its start
            const bool opened =
                ep.states[static_cast<std::size_t>(t)].gripper_open >
                world::kOpenThreshold;
            (opened ? sig.release_crossing : sig.grasp_crossing) = true;
        }
    }

    sig.held_throughout = true;
    for (int t = from; t < to; ++t) {
        bool held = false;
        for (const auto& o : ep.states[static_cast<std::size_t>(t)].objects) {
            held = held || o.held;
        }
        if (!held) {
            sig.held_throughout = false;
            break;
        }
    }

    auto dist3_to_target = [&](int t) {
        const auto& s = ep.states[static_cast<std::size_t>(t)];
        const auto* obj = s.find_object(target);
        const double dx = s.gx - obj->x, dy = s.gy - obj->y, dz = s.gz;
        return std::sqrt(dx * dx + dy * dy + dz * dz);
    };
    for (int t = from; t <= to; ++t) {
        const auto& s = ep.states[static_cast<std::size_t>(t)];
        const auto* obj = s.find_object(target);
        const double dx = s.gx - obj->x, dy = s.gy - obj->y;
        if (std::sqrt(dx * dx + dy * dy) <= world::kApproachDistance) {
            sig.near_target = true;
            break;
        }
    }
    sig.toward_target = dist3_to_target(to) < dist3_to_target(from) - 1e-6;
    return sig;
}

}  // namespace

std::vector<LabeledSegment> assign_skills(const world::Episode& episode,
                                          std::span<const int> boundaries,
                                          const SkillLibrary& library) {
    library.validate();
    if (boundaries.size() < 2 || boundaries.front() != 0 ||
        boundaries.back() != episode.length() - 1) {
        throw ValidationError("invalid boundary list");
    }
    std::vector<float> openness;
    for (const auto& s : episode.states) openness.push_back(s.gripper_open);
    const auto crossings = gripper_transitions(openness);

    std::vector<LabeledSegment> out;
    for (std::size_t i = 0; i + 1 < boundaries.size(); ++i) {
        const int from = boundaries[i];
        const int to = boundaries[i + 1];
        if (from >= to) throw ValidationError("boundaries must be increasing");
        const auto sig = segment_signature(episode, from, to, crossings);
        int skill = kSkillAdjust;
        if (sig.release_crossing) {
            skill = kSkillPlaceOnto;
        } else if (sig.grasp_crossing || sig.held_throughout) {
            skill = kSkillPickUp;
        } else if (sig.toward_target || sig.near_target) {
            skill = kSkillApproach;
        }
        out.push_back({from, to, skill});
    }
    return out;
}

int MilestonePlan::stage_of_frame(int t) const {
    for (std::size_t i = 0; i < segments.size(); ++i) {
        if (t >= segments[i].from && t < segments[i].to) {
            return static_cast<int>(i);
        }
    }
    if (!segments.empty() && t == segments.back().to) {
        return static_cast<int>(segments.size()) - 1;
    }
    throw ValidationError("frame " + std::to_string(t) + " outside plan range");
}

void MilestonePlan::validate(int episode_length) const {
    const int count = stage_count();
    if (count < kMinSegments || count > kMaxSegments) {
        throw ValidationError("plan must have between 2 and 16 segments, got " +
                              std::to_string(count));
    }
    if (segments.front().from != 0 ||
        segments.back().to != episode_length - 1) {
        throw ValidationError("plan must span the full episode");
    }
    for (std::size_t i = 0; i < segments.size(); ++i) {
        const auto& s = segments[i];
        if (s.from >= s.to) throw ValidationError("segment with from >= to");
        if (i > 0 && segments[i - 1].to != s.from) {
            throw ValidationError("segments are not contiguous");
        }
        for (int g : s.goal_frame) {
            if (g < s.from || g > s.to) {
                throw ValidationError("goal frame outside its segment");
            }
        }
    }
}

RuleAnnotator::RuleAnnotator(SkillLibrary library)
    : library_(std::move(library)) {
    library_.validate();
}

std::vector<MilestoneSegment> RuleAnnotator::annotate(
    const world::Episode& episode, std::span<const LabeledSegment> segments) {
    const std::string obj(world::object_name(episode.scenario.target_code));
    std::vector<MilestoneSegment> out;
    for (const auto& seg : segments) {
        std::string text =
            library_.skills.at(static_cast<std::size_t>(seg.skill_id))
                .text_template;
        if (const auto pos = text.find("{obj}"); pos != std::string::npos) {
            text.replace(pos, 5, obj);
        }
        out.push_back({text, seg.from, seg.to, {seg.to, seg.to}, seg.skill_id});
    }
    return out;
}

MilestonePlan merge_and_describe(const world::Episode& episode,
                                 std::span<const LabeledSegment> segments,
                                 Annotator& annotator) {
    if (segments.empty()) throw ValidationError("no segments");
    for (std::size_t i = 0; i < segments.size(); ++i) {
        if (segments[i].from >= segments[i].to) {
            throw ValidationError("segment with from >= to");
        }
        if (i > 0 && segments[i - 1].to != segments[i].from) {
            throw ValidationError("segments are not contiguous");
        }
    }

    std::vector<LabeledSegment> merged;
    for (const auto& seg : segments) {
        if (!merged.empty() && merged.back().skill_id == seg.skill_id) {
            merged.back().to = seg.to;
        } else {
            merged.push_back(seg);
        }
    }

    // Normalize the count into [2, 16]: fold the shortest segment into a
    // neighbor while over budget, split the midpoint when down to one.
    while (static_cast<int>(merged.size()) > kMaxSegments) {
        std::size_t shortest = 0;
        for (std::size_t i = 1; i < merged.size(); ++i) {
            if (merged[i].to - merged[i].from <
                merged[shortest].to - merged[shortest].from) {
                shortest = i;
            }
        }
        if (shortest == 0) {
            merged[1].from = merged[0].from;
            merged.erase(merged.begin());
        } else {
            merged[shortest - 1].to = merged[shortest].to;
            merged.erase(merged.begin() +
                         static_cast<std::ptrdiff_t>(shortest));
        }
    }
    if (merged.size() == 1) {
        const int from = merged[0].from, to = merged[0].to;
        const int mid = (from + to) / 2;
        if (mid <= from || mid >= to) {
            throw ValidationError("episode too short for a 2-segment plan");
        }
        const int skill = merged[0].skill_id;
        merged = {{from, mid, skill}, {mid, to, skill}};
    }

    auto annotated = annotator.annotate(episode, merged);
    MilestonePlan plan;
    plan.instruction = episode.instruction;
    plan.segments = std::move(annotated);
    for (auto& seg : plan.segments) seg.goal_frame = {seg.to, seg.to};
    plan.validate(episode.length());
    return plan;
}

MilestonePlan label_episode(const world::Episode& episode, Annotator& annotator,
                            const MilestoneConfig& config) {
    const auto boundaries =
        candidate_boundaries(episode, config.epsilon, config.merge_window);
    const auto labeled =
        assign_skills(episode, boundaries, SkillLibrary::standard());
    return merge_and_describe(episode, labeled, annotator);
}

}  // namespace desk::milestone
