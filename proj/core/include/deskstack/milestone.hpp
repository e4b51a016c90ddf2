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

#ifndef DESKSTACK_MILESTONE_HPP
#define DESKSTACK_MILESTONE_HPP

#include <array>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "deskstack/world.hpp"

namespace desk::milestone {

struct Vec3 {
    double x = 0.0, y = 0.0, z = 0.0;
};

struct Skill {
    int id = 0;
    std::string verb;
    std::string text_template;  // contains an {obj} slot
};

struct SkillLibrary {
    std::vector<Skill> skills;

    static SkillLibrary standard();
    const Skill& by_verb(std::string_view verb) const;
    void validate() const;  // dense ids from 0, unique verbs, size <= 50
};

// Canonical skill ids in the standard library.
constexpr int kSkillApproach = 0;
constexpr int kSkillPickUp = 1;
constexpr int kSkillPlaceOnto = 2;
constexpr int kSkillMove = 3;
constexpr int kSkillAdjust = 4;

struct LabeledSegment {
    int from = 0;
    int to = 0;  // inclusive frame range [from, to], from < to
    int skill_id = 0;
};

struct MilestoneSegment {
    std::string subtask;
    int from = 0;
    int to = 0;
    std::array<int, 2> goal_frame{};  // per view [head, wrist]
    int skill_id = 0;
};

struct MilestonePlan {
    std::string instruction;
    std::vector<MilestoneSegment> segments;

    int stage_count() const { return static_cast<int>(segments.size()); }
    int boundary(int stage) const { return segments.at(static_cast<std::size_t>(stage)).to; }
    // Stage owning frame t; boundary frames belong to the following stage.
    int stage_of_frame(int t) const;
    void validate(int episode_length) const;
};

constexpr int kMaxSegments = 16;
constexpr int kMinSegments = 2;

struct MilestoneConfig {
    double epsilon = 0.02;   // RDP tolerance in table units
    int merge_window = 3;    // candidates closer than this merge to the later
};

// Ramer-Douglas-Peucker on a 3-D polyline. Keeps endpoints; distances are to
// the infinite chord line, falling back to point distance when the endpoints
// coincide. Returned indices are ascending and include 0 and last.
std::vector<int> rdp_simplify(std::span<const Vec3> points, double epsilon);

// Frames where the openness side of 0.5 flips; exactly 0.5 counts closed.
std::vector<int> gripper_transitions(std::span<const float> openness);

std::vector<int> candidate_boundaries(const world::Episode& episode,
                                      double epsilon,
                                      int merge_window = 3);

// Deterministic signature rules. A segment [from, to) owns a crossing at its
// start frame but not at its end frame.
std::vector<LabeledSegment> assign_skills(const world::Episode& episode,
                                          std::span<const int> boundaries,
                                          const SkillLibrary& library);

class Annotator {
  public:
    virtual ~Annotator() = default;
    // Maps merged candidate segments to final segments with subtask texts.
    // Returned segments must satisfy MilestonePlan invariants for the episode.
    virtual std::vector<MilestoneSegment> annotate(
        const world::Episode& episode,
        std::span<const LabeledSegment> segments) = 0;
};

// Fills texts from the skill library templates using the scenario target name.
class RuleAnnotator : public Annotator {
  public:
    explicit RuleAnnotator(SkillLibrary library = SkillLibrary::standard());
    std::vector<MilestoneSegment> annotate(
        const world::Episode& episode,
        std::span<const LabeledSegment> segments) override;

  private:
    SkillLibrary library_;
};

// Merges adjacent equal-skill segments, normalizes the segment count into
// [2, 16], lets the annotator fill subtask texts, and validates the result.
// Goal frame of each segment is its final frame, for both views.
MilestonePlan merge_and_describe(const world::Episode& episode,
                                 std::span<const LabeledSegment> segments,
                                 Annotator& annotator);

// Full pipeline: candidates -> skills -> merge/describe.
MilestonePlan label_episode(const world::Episode& episode,
                            Annotator& annotator,
                            const MilestoneConfig& config = {});

}  // namespace desk::milestone

#endif  // DESKSTACK_MILESTONE_HPP
