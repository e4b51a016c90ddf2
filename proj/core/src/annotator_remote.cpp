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

#include "deskstack/annotator_remote.hpp"

#include <chrono>
#include <thread>

#include <httplib.h>
#include <json.hpp>

namespace desk::milestone {

using nlohmann::json;

std::string base64_encode(std::span<const std::uint8_t> data) {
    static const char* alphabet =
        "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";
    std::string out;
    out.reserve((data.size() + 2) / 3 * 4);
    std::size_t i = 0;
    while (i + 2 < data.size()) {
        const std::uint32_t v = (static_cast<std::uint32_t>(data[i]) << 16) |
                                (static_cast<std::uint32_t>(data[i + 1]) << 8) |
                                data[i + 2];
        out.push_back(alphabet[(v >> 18) & 63]);
        out.push_back(alphabet[(v >> 12) & 63]);
        out.push_back(alphabet[(v >> 6) & 63]);
        out.push_back(alphabet[v & 63]);
        i += 3;
    }
    if (i + 1 == data.size()) {
        const std::uint32_t v = static_cast<std::uint32_t>(data[i]) << 16;
        out.push_back(alphabet[(v >> 18) & 63]);
        out.push_back(alphabet[(v >> 12) & 63]);
        out += "==";
    } else if (i + 2 == data.size()) {
        const std::uint32_t v = (static_cast<std::uint32_t>(data[i]) << 16) |
                                (static_cast<std::uint32_t>(data[i + 1]) << 8);
        out.push_back(alphabet[(v >> 18) & 63]);
        out.push_back(alphabet[(v >> 12) & 63]);
        out.push_back(alphabet[(v >> 6) & 63]);
        out.push_back('=');
    }
    return out;
}

namespace {

Transport http_transport(const RemoteConfig& config) {
    return [config](const std::string& body) {
        const auto& url = config.endpoint;
        const auto scheme_end = url.find("://");
        if (scheme_end == std::string::npos) {
            throw ValidationError("invalid annotator endpoint: " + url);
        }
        const auto path_start = url.find('/', scheme_end + 3);
        const std::string base =
            path_start == std::string::npos ? url : url.substr(0, path_start);
        const std::string path =
            path_start == std::string::npos ? "/" : url.substr(path_start);

        httplib::Client client(base);
        const auto seconds = static_cast<time_t>(config.timeout_seconds);
        const auto micros = static_cast<time_t>(
            (config.timeout_seconds - static_cast<double>(seconds)) * 1e6);
        client.set_connection_timeout(seconds, micros);
        client.set_read_timeout(seconds, micros);
        client.set_write_timeout(seconds, micros);

        auto res = client.Post(path, body, "application/json");
        if (!res) {
            throw RuntimeFailure("annotation request failed: " +
                                 httplib::to_string(res.error()));
        }
        if (res->status != 200) {
            throw RuntimeFailure("annotation service returned status " +
                                 std::to_string(res->status));
        }
        return res->body;
    };
}

}  // namespace

RemoteAnnotator::RemoteAnnotator(RemoteConfig config, Transport transport)
    : config_(std::move(config)), transport_(std::move(transport)) {
    if (!transport_) transport_ = http_transport(config_);
}

std::string RemoteAnnotator::build_request(
    const world::Episode& episode, std::span<const LabeledSegment> segments,
    const SkillLibrary& library) {
    json req;
    req["episode_id"] = episode.seed;
    req["instruction"] = episode.instruction;
    json segs = json::array();
    json thumbs = json::array();
    for (const auto& seg : segments) {
        segs.push_back({{"from", seg.from},
                        {"to", seg.to},
                        {"skill",
                         library.skills.at(static_cast<std::size_t>(seg.skill_id))
                             .verb}});
        const auto& raster =
            episode.rasters[static_cast<std::size_t>(seg.to)][0];
        thumbs.push_back(base64_encode(
            std::span<const std::uint8_t>(raster.grid.data(),
                                          raster.grid.size())));
    }
    req["segments"] = std::move(segs);
    req["thumbnails"] = std::move(thumbs);
    return req.dump();
}

std::vector<MilestoneSegment> RemoteAnnotator::parse_response(
    const std::string& body, std::span<const LabeledSegment> segments) {
    json j;
    try {
        j = json::parse(body);
    } catch (const json::exception& e) {
        throw RuntimeFailure(std::string("malformed annotation response: ") +
                             e.what());
    }
    std::vector<MilestoneSegment> out;
    for (const auto& s : j.at("segments")) {
        MilestoneSegment seg;
        seg.subtask = s.at("subtask").get<std::string>();
        seg.from = s.at("from").get<int>();
        seg.to = s.at("to").get<int>();
        seg.goal_frame = {seg.to, seg.to};
        seg.skill_id = -1;
        for (const auto& in : segments) {
            if (in.from >= seg.from && in.from < seg.to) {
                seg.skill_id = in.skill_id;
                break;
            }
        }
        if (seg.skill_id < 0) {
            throw ValidationError(
                "annotation response segment matches no request segment");
        }
        out.push_back(std::move(seg));
    }
    return out;
}

std::vector<MilestoneSegment> RemoteAnnotator::annotate(
    const world::Episode& episode, std::span<const LabeledSegment> segments) {
    const auto request = build_request(episode, segments, library_);
    double backoff = config_.backoff_seconds;
    std::string last_error;
    for (int attempt = 0; attempt <= config_.retries; ++attempt) {
        if (attempt > 0) {
            std::this_thread::sleep_for(std::chrono::duration<double>(backoff));
            backoff *= 2.0;
        }
        try {
            return parse_response(transport_(request), segments);
        } catch (const ValidationError&) {
            throw;  // malformed content does not improve on retry
        } catch (const std::exception& e) {
            last_error = e.what();
        }
    }
    throw RuntimeFailure("remote annotation failed after " +
                         std::to_string(config_.retries + 1) + " attempts (" +
                         last_error + "); episode " +
                         std::to_string(episode.seed) + " left unlabeled");
}

}  // namespace desk::milestone
