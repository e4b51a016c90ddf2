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

#ifndef DESKSTACK_ANNOTATOR_REMOTE_HPP
#define DESKSTACK_ANNOTATOR_REMOTE_HPP

#include <functional>
#include <string>

#include "deskstack/milestone.hpp"

namespace desk::milestone {

struct RemoteConfig {
    std::string endpoint;  // e.g. http://127.0.0.1:8080/annotate
    double timeout_seconds = 30.0;
    int retries = 3;
    double backoff_seconds = 1.0;  // doubles on every retry
};

// Maps a request JSON document to a response JSON document; throws on
// transport failure. The default transport POSTs over HTTP.
using Transport = std::function<std::string(const std::string&)>;

// Client for an external annotation service. Request:
//   {episode_id, segments: [{from, to, skill}], thumbnails: [base64...]}
// (one thumbnail per segment: the head-view goal-frame raster bytes).
// Response: {segments: [{from, to, subtask}]}.
class RemoteAnnotator : public Annotator {
  public:
    explicit RemoteAnnotator(RemoteConfig config, Transport transport = {});

    std::vector<MilestoneSegment> annotate(
        const world::Episode& episode,
        std::span<const LabeledSegment> segments) override;

    // Exposed for tests and for any sibling implementation of the service.
    static std::string build_request(const world::Episode& episode,
                                     std::span<const LabeledSegment> segments,
                                     const SkillLibrary& library);
    static std::vector<MilestoneSegment> parse_response(
        const std::string& body, std::span<const LabeledSegment> segments);

  private:
    RemoteConfig config_;
    Transport transport_;
    SkillLibrary library_ = SkillLibrary::standard();
};

std::string base64_encode(std::span<const std::uint8_t> data);

}  // namespace desk::milestone

#endif  // DESKSTACK_ANNOTATOR_REMOTE_HPP
