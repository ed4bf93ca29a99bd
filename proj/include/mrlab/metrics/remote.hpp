// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <atomic>
#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <map>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include <httplib.h>

#include "mrlab/common/hash.hpp"
#include "mrlab/common/io.hpp"
#include "mrlab/common/parallel.hpp"
#include "mrlab/metrics/files.hpp"
#include "mrlab/metrics/judge.hpp"

namespace mrlab::metrics {

struct RemoteJudgeConfig {
  /// Scheme, host and port, e.g. "http://127.0.0.1:8000".
  std::string base_url = "http://127.0.0.1:8000";
  std::string path = "/v1/chat/completions";
  std::string model = "gpt-3.5-turbo";
  /// Name of the environment variable holding the bearer token (may be unset).
  std::string api_key_env = "MRLAB_JUDGE_API_KEY";
  int max_retries = 3;
  int backoff_ms = 200;
  int timeout_s = 60;
  int concurrency = 4;
  /// Directory for the decomposition cache; empty keeps it in memory only.
  std::string cache_dir;

  void validate() const {
    if (base_url.empty()) throw ArgumentError("judge.base_url must be set");
    if (max_retries < 0) throw ArgumentError("judge.max_retries must be non-negative");
    if (backoff_ms < 0) throw ArgumentError("judge.backoff_ms must be non-negative");
    if (timeout_s < 1) throw ArgumentError("judge.timeout_s must be positive");
    if (concurrency < 1) throw ArgumentError("judge.concurrency must be positive");
  }
};

namespace detail {

inline constexpr const char* kJudgeSystemPrompt =
    "You grade a video caption against a list of ground-truth atomic events. "
    "For every listed event decide whether the caption states it correctly (covered), does not mention it "
    "(missing), or mentions it with a wrong detail (incorrect). Also list every event the caption describes "
    "that matches none of the listed events (extras). Reply with one JSON object and nothing else: "
    R"({"events": [{"id": "<event id>", "status": "covered|missing|incorrect"}], "extras": [{"text": "<span>"}]})";

inline constexpr const char* kDecomposeSystemPrompt =
    "Split the caption into minimal atomic events, one fact each. Label each event with a category: speech for "
    "spoken content, sound for non-speech audio, visual otherwise. Reply with one JSON object and nothing else: "
    R"({"events": [{"text": "<event>", "category": "speech|sound|visual"}]})";

inline std::string judge_user_prompt(std::string_view caption, std::span<const AtomicEvent> events) {
  json list = json::array();
  for (const auto& e : events) list.push_back({{"id", e.id}, {"text", e.text}});
  return "Ground-truth events:\n" + list.dump() + "\nCaption:\n" + std::string(caption);
}

/// Strips an optional Markdown code fence around a JSON reply.
inline std::string strip_fence(std::string s) {
  auto first = s.find('{');
  auto last = s.rfind('}');
  if (first == std::string::npos || last == std::string::npos || last < first) return s;
  return s.substr(first, last - first + 1);
}

inline EventJudgment parse_judgment_reply(const std::string& content, std::span<const AtomicEvent> events) {
  json j;
  try {
    j = json::parse(strip_fence(content));
  } catch (const json::exception& ex) {
    throw FormatError(std::string("reply is not JSON: ") + ex.what());
  }
  if (!j.is_object() || !j.contains("events") || !j["events"].is_array())
    throw FormatError("reply lacks an \"events\" array");
  std::map<std::string, EventStatus> seen;
  for (const auto& e : j["events"]) {
    if (!e.is_object() || !e.contains("id") || !e.contains("status") || !e["id"].is_string() ||
        !e["status"].is_string())
      throw FormatError("event entries need string \"id\" and \"status\"");
    const auto id = e["id"].get<std::string>();
    if (!seen.emplace(id, parse_status(e["status"].get<std::string>())).second)
      throw FormatError("event " + id + " labelled twice");
  }
  EventJudgment out;
  for (const auto& ev : events) {
    auto it = seen.find(ev.id);
    if (it == seen.end()) throw FormatError("event " + ev.id + " has no label");
    out.event_ids.push_back(ev.id);
    out.statuses.push_back(it->second);
  }
  if (seen.size() != events.size()) throw FormatError("reply labels unknown event ids");
  if (j.contains("extras")) {
    if (!j["extras"].is_array()) throw FormatError("\"extras\" must be an array");
    for (const auto& x : j["extras"]) {
      if (x.is_string()) {
        out.extras.push_back({x.get<std::string>(), 0, 0});
      } else if (x.is_object() && x.contains("text") && x["text"].is_string()) {
        out.extras.push_back({x["text"].get<std::string>(), 0, 0});
      } else {
        throw FormatError("extras entries need a \"text\" string");
      }
    }
  }
  return out;
}

inline std::vector<AtomicEvent> parse_decomposition_reply(const std::string& content) {
  json j;
  try {
    j = json::parse(strip_fence(content));
  } catch (const json::exception& ex) {
    throw FormatError(std::string("reply is not JSON: ") + ex.what());
  }
  if (!j.is_object() || !j.contains("events") || !j["events"].is_array() || j["events"].empty())
    throw FormatError("reply lacks a non-empty \"events\" array");
  std::vector<AtomicEvent> out;
  for (const auto& e : j["events"]) {
    if (!e.is_object() || !e.contains("text") || !e["text"].is_string())
      throw FormatError("event entries need a \"text\" string");
    AtomicEvent ev;
    ev.id = "e" + std::to_string(out.size());
    ev.text = e["text"].get<std::string>();
    ev.category = parse_category(e.value("category", std::string("visual")));
    out.push_back(std::move(ev));
  }
  return out;
}

}  // namespace detail

/// Judge backed by a chat-completions HTTP endpoint. Requests use temperature 0;
/// transport failures are retried with exponential backoff, and an unparseable
/// reply is re-asked once with the parse error before giving up.
class RemoteJudge final : public JudgeBackend {
 public:
  explicit RemoteJudge(RemoteJudgeConfig cfg) : cfg_(std::move(cfg)) { cfg_.validate(); }

  const RemoteJudgeConfig& config() const { return cfg_; }

  EventJudgment judge(std::string_view caption, std::span<const AtomicEvent> events) const override {
    if (events.empty()) throw ArgumentError("judge_caption: empty event list");
    return ask<EventJudgment>(detail::kJudgeSystemPrompt, detail::judge_user_prompt(caption, events),
                              [&](const std::string& c) { return detail::parse_judgment_reply(c, events); });
  }

  std::string name() const override { return "remote:" + cfg_.model; }

  /// Events for a ground-truth caption, cached by caption hash (memory and,
  /// when configured, one JSON file per caption).
  std::vector<AtomicEvent> decompose(std::string_view gt_caption) const {
    const std::string key = content_hash(gt_caption);
    if (auto hit = cache_lookup(key)) return parse_cached(*hit);
    auto events = ask<std::vector<AtomicEvent>>(detail::kDecomposeSystemPrompt, std::string(gt_caption),
                                                detail::parse_decomposition_reply);
    json arr = json::array();
    for (const auto& e : events) arr.push_back(event_to_json(e));
    cache_store(key, arr.dump());
    return events;
  }

  std::size_t requests_sent() const { return requests_.load(); }

 private:
  template <typename T, typename Parse>
  T ask(const char* system, const std::string& user, Parse&& parse) const {
    json messages = json::array({{{"role", "system"}, {"content", system}}, {{"role", "user"}, {"content", user}}});
    std::string reply = complete(messages);
    try {
      return parse(reply);
    } catch (const FormatError& first) {
      messages.push_back({{"role", "assistant"}, {"content", reply}});
      messages.push_back({{"role", "user"},
                          {"content", std::string("That reply could not be used (") + first.what() +
                                          "). Answer again with only the JSON object."}});
      reply = complete(messages);
      try {
        return parse(reply);
      } catch (const FormatError& second) {
        throw JudgeError(std::string("unparseable judge reply after repair: ") + second.what());
      }
    }
  }

  std::string complete(const json& messages) const {
    const json body{{"model", cfg_.model}, {"temperature", 0}, {"messages", messages},
                    {"response_format", {{"type", "json_object"}}}};
    httplib::Headers headers;
    if (const char* key = std::getenv(cfg_.api_key_env.c_str()); key && *key)
      headers.emplace("Authorization", std::string("Bearer ") + key);
    std::string last_error;
    for (int attempt = 0; attempt <= cfg_.max_retries; ++attempt) {
      if (attempt > 0) std::this_thread::sleep_for(std::chrono::milliseconds(cfg_.backoff_ms << (attempt - 1)));
      httplib::Client client(cfg_.base_url);
      client.set_connection_timeout(cfg_.timeout_s);
      client.set_read_timeout(cfg_.timeout_s);
      ++requests_;
      auto res = client.Post(cfg_.path, headers, body.dump(), "application/json");
      if (!res) {
        last_error = "transport error: " + httplib::to_string(res.error());
        continue;
      }
      if (res->status == 429 || res->status >= 500) {
        last_error = "HTTP " + std::to_string(res->status);
        continue;
      }
      if (res->status != 200) throw JudgeError("judge endpoint returned HTTP " + std::to_string(res->status));
      try {
        auto j = json::parse(res->body);
        return j.at("choices").at(0).at("message").at("content").get<std::string>();
      } catch (const json::exception& ex) {
        // A malformed envelope is a protocol fault, not a model-content fault.
        last_error = std::string("bad completion envelope: ") + ex.what();
      }
    }
    throw JudgeError("judge endpoint unreachable after retries: " + last_error);
  }

  std::optional<std::string> cache_lookup(const std::string& key) const {
    std::lock_guard lock(cache_mutex_);
    if (auto it = cache_.find(key); it != cache_.end()) return it->second;
    if (!cfg_.cache_dir.empty()) {
      const auto path = std::filesystem::path(cfg_.cache_dir) / (key + ".json");
      if (std::filesystem::exists(path)) {
        auto text = read_file(path);
        cache_.emplace(key, text);
        return text;
      }
    }
    return std::nullopt;
  }

  void cache_store(const std::string& key, const std::string& text) const {
    std::lock_guard lock(cache_mutex_);
    cache_.emplace(key, text);
    if (!cfg_.cache_dir.empty()) write_file_atomic(std::filesystem::path(cfg_.cache_dir) / (key + ".json"), text);
  }

  static std::vector<AtomicEvent> parse_cached(const std::string& text) {
    std::vector<AtomicEvent> out;
    for (const auto& e : json::parse(text)) out.push_back(event_from_json(e));
    return out;
  }

  RemoteJudgeConfig cfg_;
  mutable std::mutex cache_mutex_;
  mutable std::map<std::string, std::string> cache_;
  mutable std::atomic<std::size_t> requests_{0};
};

inline std::vector<AtomicEvent> decompose_caption(std::string_view gt_caption, const RemoteJudge& judge) {
  return judge.decompose(gt_caption);
}

/// Outcome of judging one item in a batch; `error` is set when the judge failed.
struct ItemResult {
  std::optional<Evaluation> evaluation;
  std::string error;
};

/// Judges items with at most `jobs` in flight; results are in input order.
inline std::vector<ItemResult> judge_all(const std::vector<std::string>& captions,
                                         const std::vector<std::vector<AtomicEvent>>& events,
                                         const JudgeBackend& judge, int jobs) {
  if (captions.size() != events.size()) throw ArgumentError("judge_all: captions and events differ in length");
  std::vector<ItemResult> out(captions.size());
  parallel_for(captions.size(), jobs, [&](std::size_t i) {
    try {
      out[i].evaluation = evaluate_caption(captions[i], events[i], judge);
    } catch (const JudgeError& e) {
      out[i].error = e.what();
    }
  });
  return out;
}

}  // namespace mrlab::metrics
