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

#include <algorithm>

#include "deskstack/milestone.hpp"
#include "support/oracles.hpp"

using namespace desk;
using namespace desk::milestone;
using world::Episode;
using world::ScenarioKind;

namespace {

std::vector<Vec3> random_polyline(Rng& rng, int n) {
    std::vector<Vec3> pts;
    for (int i = 0; i < n; ++i) {
        pts.push_back({rng.uniform(), rng.uniform(), rng.uniform()});
    }
    return pts;
}

Episode expert_episode(std::uint64_t scenario_seed, std::uint64_t seed,
                       ScenarioKind kind = ScenarioKind::kInDomain) {
    const auto scenarios = world::gen_scenarios(kind, 1, scenario_seed);
    return world::scripted_expert(scenarios[0], seed);
}

// A hand-built episode: straight-line motion, constant openness, one
// off-path object so skill rules have a target to look at.
Episode synthetic_episode(int frames, bool move) {
    const auto scenarios = world::gen_scenarios(ScenarioKind::kInDomain, 1, 4);
    Episode ep;
    ep.scenario = scenarios[0];
    ep.instruction = scenarios[0].instruction();
    auto s = world::initial_state(scenarios[0], 55);
    s.gx = 0.1f;
    s.gy = 0.5f;
    s.gz = 0.5f;
    ep.states.push_back(s);
    ep.rasters.push_back(world::render(s));
    for (int t = 1; t < frames; ++t) {
        const world::Action a(move ? 0.01f : 0.0f, 0, 0, 0);
        s = world::step(s, a);
        ep.actions.push_back(a);
        ep.states.push_back(s);
        ep.rasters.push_back(world::render(s));
    }
    return ep;
}

int grasp_frame(const Episode& ep) {
    for (const auto& p : ep.expert_phases) {
        if (p.label == "close") return p.end_frame;
    }
    return -1;
}

int release_frame(const Episode& ep) {
    for (const auto& p : ep.expert_phases) {
        if (p.label == "open") return p.end_frame;
    }
    return -1;
}

}  // namespace

TEST_CASE("rdp keeps endpoints and drops collinear interiors") {
    const std::vector<Vec3> pts{{0, 0, 0}, {0.5, 0.5, 0}, {1, 1, 0}};
    CHECK(rdp_simplify(pts, 0.01) == std::vector<int>{0, 2});
}

TEST_CASE("rdp threshold decides the corner point") {
    const std::vector<Vec3> pts{{0, 0, 0}, {1, 1, 0}, {2, 0, 0}};
    CHECK(rdp_simplify(pts, 0.5) == std::vector<int>{0, 1, 2});
    CHECK(rdp_simplify(pts, 1.5) == std::vector<int>{0, 2});
    CHECK(oracle::rdp_oracle(pts, 0.5) == std::vector<int>{0, 1, 2});
    CHECK(oracle::rdp_oracle(pts, 1.5) == std::vector<int>{0, 2});
}

TEST_CASE("rdp input validation") {
    CHECK_THROWS_AS(rdp_simplify(std::vector<Vec3>{{0, 0, 0}}, 0.1),
                    ValidationError);
    CHECK_THROWS_AS(rdp_simplify(std::vector<Vec3>{{0, 0, 0}, {1, 0, 0}}, -1),
                    ValidationError);
}

TEST_CASE("rdp matches the brute-force oracle on random polylines") {
    Rng rng(11);
    for (int trial = 0; trial < 200; ++trial) {
        const int n = static_cast<int>(rng.uniform_int(3, 40));
        const auto pts = random_polyline(rng, n);
        for (double eps : {0.01, 0.05, 0.2}) {
            CHECK(rdp_simplify(pts, eps) == oracle::rdp_oracle(pts, eps));
        }
    }
}

TEST_CASE("rdp keep sets shrink as epsilon grows") {
    Rng rng(12);
    for (int trial = 0; trial < 50; ++trial) {
        const auto pts =
            random_polyline(rng, static_cast<int>(rng.uniform_int(4, 30)));
        const auto fine = rdp_simplify(pts, 0.02);
        const auto coarse = rdp_simplify(pts, 0.2);
        CHECK(std::includes(fine.begin(), fine.end(), coarse.begin(),
                            coarse.end()));
    }
}

TEST_CASE("gripper transitions flag the side flips of 0.5") {
    CHECK(gripper_transitions(std::vector<float>{1, 1, 0, 0, 1}) ==
          std::vector<int>{2, 4});
    CHECK(gripper_transitions(std::vector<float>{0.7f, 0.7f, 0.7f}).empty());
    CHECK_THROWS_AS(gripper_transitions(std::vector<float>{}),
                    ValidationError);
    // exactly 0.5 counts as the closed side
    CHECK(gripper_transitions(std::vector<float>{0.6f, 0.5f, 0.4f}) ==
          std::vector<int>{1});
}

TEST_CASE("expert transitions land on the recorded phase ends") {
    const auto ep = expert_episode(31, 17);
    std::vector<float> openness;
    for (const auto& s : ep.states) openness.push_back(s.gripper_open);
    const auto trans = gripper_transitions(openness);
    REQUIRE(trans.size() == 2);
    CHECK(trans[0] == grasp_frame(ep));
    CHECK(trans[1] == release_frame(ep));
}

TEST_CASE("candidate boundaries cover all eight phase ends within two frames") {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        const auto ep = expert_episode(100 + seed, 7 * seed + 1);
        const auto cands = candidate_boundaries(ep, 0.02);
        for (const auto& phase : ep.expert_phases) {
            bool covered = false;
            for (int c : cands) {
                if (std::abs(c - phase.end_frame) <= 2) covered = true;
            }
            INFO("phase ", phase.label, " at ", phase.end_frame);
            CHECK(covered);
        }
    }
}

TEST_CASE("candidate boundaries degenerate cases") {
    SUBCASE("two-frame episode keeps only the endpoints") {
        auto ep = synthetic_episode(2, true);
        CHECK(candidate_boundaries(ep, 0.02) == std::vector<int>{0, 1});
    }
    SUBCASE("straight line with constant gripper has no interior candidates") {
        auto ep = synthetic_episode(30, true);
        CHECK(candidate_boundaries(ep, 0.02) == std::vector<int>{0, 29});
    }
}

TEST_CASE("skill assignment on the expert pipeline") {
    const auto ep = expert_episode(41, 23);
    const auto cands = candidate_boundaries(ep, 0.02);
    const auto labeled =
        assign_skills(ep, cands, SkillLibrary::standard());

    const int grasp = grasp_frame(ep);
    const int release = release_frame(ep);

    SUBCASE("first segment approaches") {
        CHECK(labeled.front().skill_id == kSkillApproach);
    }
    SUBCASE("the segment owning the close crossing picks up") {
        bool found = false;
        for (const auto& seg : labeled) {
            if (seg.from <= grasp && grasp < seg.to) {
                CHECK(seg.skill_id == kSkillPickUp);
                found = true;
            }
        }
        CHECK(found);
    }
    SUBCASE("the segment owning the open crossing places") {
        for (const auto& seg : labeled) {
            if (seg.from <= release && release < seg.to) {
                CHECK(seg.skill_id == kSkillPlaceOnto);
            }
        }
    }
}

TEST_CASE("zero-motion segments far from the target fall back to adjust") {
    auto ep = synthetic_episode(20, false);
    const std::vector<int> boundaries{0, 10, 19};
    const auto labeled = assign_skills(ep, boundaries, SkillLibrary::standard());
    CHECK(labeled[0].skill_id == kSkillAdjust);
    CHECK(labeled[1].skill_id == kSkillAdjust);
}

TEST_CASE("merge collapses adjacent equal skills") {
    const auto ep = synthetic_episode(30, true);
    RuleAnnotator annotator;
    const std::vector<LabeledSegment> segments{
        {0, 10, kSkillApproach}, {10, 20, kSkillApproach}, {20, 29, kSkillPickUp}};
    const auto plan = merge_and_describe(ep, segments, annotator);
    REQUIRE(plan.stage_count() == 2);
    CHECK(plan.segments[0].from == 0);
    CHECK(plan.segments[0].to == 20);
    CHECK(plan.segments[0].skill_id == kSkillApproach);
    CHECK(plan.segments[1].to == 29);
    CHECK(plan.segments[1].goal_frame[0] == 29);
    CHECK(plan.segments[1].goal_frame[1] == 29);
}

TEST_CASE("expert labeling yields the canonical three-segment plan") {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        const auto ep = expert_episode(500 + seed, 13 * seed + 3);
        RuleAnnotator annotator;
        const auto plan = label_episode(ep, annotator);
        REQUIRE(plan.stage_count() == 3);

        const std::string obj(world::object_name(ep.scenario.target_code));
        CHECK(plan.segments[0].subtask == "Approach the " + obj);
        CHECK(plan.segments[1].subtask == "Pick up the " + obj);
        CHECK(plan.segments[2].subtask ==
              "Place the " + obj + " onto the plate");

        // grasp/release events appear as plan boundaries
        CHECK(plan.segments[0].to == grasp_frame(ep));
        CHECK(plan.segments[1].to == release_frame(ep));
        CHECK(plan.segments[2].to == ep.length() - 1);
    }
}

TEST_CASE("merge is idempotent") {
    const auto ep = expert_episode(61, 29);
    RuleAnnotator annotator;
    const auto plan = label_episode(ep, annotator);
    std::vector<LabeledSegment> again;
    for (const auto& seg : plan.segments) {
        again.push_back({seg.from, seg.to, seg.skill_id});
    }
    const auto plan2 = merge_and_describe(ep, again, annotator);
    REQUIRE(plan2.stage_count() == plan.stage_count());
    for (int i = 0; i < plan.stage_count(); ++i) {
        const auto& a = plan.segments[static_cast<std::size_t>(i)];
        const auto& b = plan2.segments[static_cast<std::size_t>(i)];
        CHECK(a.from == b.from);
        CHECK(a.to == b.to);
        CHECK(a.subtask == b.subtask);
    }
}

TEST_CASE("annotators returning broken segments are rejected") {
    class BrokenAnnotator : public Annotator {
      public:
        std::vector<MilestoneSegment> annotate(
            const Episode&, std::span<const LabeledSegment>) override {
            return {{"a", 0, 5, {5, 5}, 0}, {"b", 7, 9, {9, 9}, 1}};  // gap
        }
    };
    const auto ep = synthetic_episode(10, true);
    BrokenAnnotator annotator;
    const std::vector<LabeledSegment> segments{{0, 5, 0}, {5, 9, 1}};
    CHECK_THROWS_AS(merge_and_describe(ep, segments, annotator),
                    ValidationError);
}

TEST_CASE("plan invariants hold over fuzzed random episodes") {
    Rng rng(404);
    RuleAnnotator annotator;
    int produced = 0;
    for (int trial = 0; trial < 1000; ++trial) {
        const auto scenarios = world::gen_scenarios(
            ScenarioKind::kInDomain, 1, 900 + static_cast<std::uint64_t>(trial));
        Episode ep;
        ep.scenario = scenarios[0];
        ep.instruction = scenarios[0].instruction();
        auto s = world::initial_state(scenarios[0], rng.next_u64());
        ep.states.push_back(s);
        ep.rasters.push_back(world::render(s));
        const int frames = static_cast<int>(rng.uniform_int(20, 60));
        for (int t = 0; t < frames; ++t) {
            const world::Action a(
                static_cast<float>(rng.uniform(-0.1, 0.1)),
                static_cast<float>(rng.uniform(-0.1, 0.1)),
                static_cast<float>(rng.uniform(-0.1, 0.1)),
                static_cast<float>(rng.uniform(-0.1, 0.1)));
            s = world::step(s, a);
            ep.actions.push_back(a);
            ep.states.push_back(s);
            ep.rasters.push_back(world::render(s));
        }
        const auto plan = label_episode(ep, annotator);
        CHECK_NOTHROW(plan.validate(ep.length()));
        ++produced;
    }
    CHECK(produced == 1000);
}

TEST_CASE("pipeline recall: grasp and release events are plan boundaries") {
    RuleAnnotator annotator;
    for (std::uint64_t i = 0; i < 100; ++i) {
        const auto ep = expert_episode(2000 + i, 31 * i + 7);
        const auto plan = label_episode(ep, annotator);
        std::vector<int> boundaries;
        for (const auto& seg : plan.segments) boundaries.push_back(seg.to);
        const int grasp = grasp_frame(ep);
        const int release = release_frame(ep);
        CHECK(std::find(boundaries.begin(), boundaries.end(), grasp) !=
              boundaries.end());
        CHECK(std::find(boundaries.begin(), boundaries.end(), release) !=
              boundaries.end());
    }
}

TEST_CASE("skill library validation") {
    auto lib = SkillLibrary::standard();
    CHECK_NOTHROW(lib.validate());
    CHECK(lib.by_verb("pick up").id == kSkillPickUp);
    CHECK_THROWS_AS(lib.by_verb("juggle"), ValidationError);

    auto dup = lib;
    dup.skills.push_back({5, "approach", "x"});
    CHECK_THROWS_AS(dup.validate(), ValidationError);
}
