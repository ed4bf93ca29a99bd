// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <vector>

#include "mrlab/common/hash.hpp"
#include "mrlab/common/io.hpp"
#include "mrlab/metrics/judge.hpp"

namespace mrlab::metrics {

inline json event_to_json(const AtomicEvent& e) {
  json j{{"id", e.id}, {"text", e.text}, {"category", std::string(to_string(e.category))}};
  if (e.attributes)
    j["attributes"] = {{"entity", e.attributes->entity}, {"action", e.attributes->action},
                       {"modifier", e.attributes->modifier}};
  return j;
}

inline AtomicEvent event_from_json(const json& j) {
  try {
    AtomicEvent e;
    e.id = j.at("id").get<std::string>();
    e.text = j.at("text").get<std::string>();
    e.category = parse_category(j.at("category").get<std::string>());
    if (j.contains("attributes")) {
      const auto& a = j.at("attributes");
      e.attributes = EventAttributes{a.at("entity").get<std::string>(), a.at("action").get<std::string>(),
                                     a.at("modifier").get<std::string>()};
    }
    return e;
  } catch (const json::exception& ex) {
    throw FormatError(std::string("bad event record: ") + ex.what());
  }
}

/// One line of an events file.
struct EventsRecord {
  std::string item_id;
  std::string gt_caption;
  std::vector<AtomicEvent> events;
};

inline json to_json(const EventsRecord& r) {
  json events = json::array();
  for (const auto& e : r.events) events.push_back(event_to_json(e));
  return {{"item_id", r.item_id}, {"gt_caption", r.gt_caption}, {"events", events}};
}

inline EventsRecord events_record_from_json(const json& j) {
  try {
    EventsRecord r;
    r.item_id = j.at("item_id").get<std::string>();
    r.gt_caption = j.at("gt_caption").get<std::string>();
    for (const auto& e : j.at("events")) r.events.push_back(event_from_json(e));
    if (r.events.empty()) throw FormatError("item " + r.item_id + " has no events");
    return r;
  } catch (const json::exception& ex) {
    throw FormatError(std::string("bad events record: ") + ex.what());
  }
}

inline std::vector<EventsRecord> read_events_file(const std::filesystem::path& path) {
  std::vector<EventsRecord> out;
  for (const auto& j : read_jsonl(path)) out.push_back(events_record_from_json(j));
  return out;
}

inline json metrics_to_json(const CaptionMetrics& m) {
  return {{"miss", m.miss_rate}, {"hall", m.hall_rate}, {"total", m.total_rate}, {"repetition", m.repetition_rate}};
}

inline CaptionMetrics metrics_from_json(const json& j) {
  CaptionMetrics m;
  m.miss_rate = j.at("miss").get<double>();
  m.hall_rate = j.at("hall").get<double>();
  m.total_rate = j.at("total").get<double>();
  m.repetition_rate = j.value("repetition", 0.0);
  return m;
}

/// One line of a judgment report.
struct JudgmentReport {
  std::string item_id;
  std::string caption_hash;
  EventJudgment judgment;
  CaptionMetrics metrics;
};

inline json to_json(const JudgmentReport& r) {
  json statuses = json::array();
  for (std::size_t i = 0; i < r.judgment.statuses.size(); ++i)
    statuses.push_back({{"id", r.judgment.event_ids[i]}, {"status", std::string(to_string(r.judgment.statuses[i]))}});
  json extras = json::array();
  for (const auto& x : r.judgment.extras)
    extras.push_back({{"text", x.text}, {"span", {x.span_begin, x.span_end}}});
  return {{"item_id", r.item_id},
          {"caption_hash", r.caption_hash},
          {"statuses", statuses},
          {"extras", extras},
          {"rates", metrics_to_json(r.metrics)}};
}

inline JudgmentReport judgment_report_from_json(const json& j) {
  try {
    JudgmentReport r;
    r.item_id = j.at("item_id").get<std::string>();
    r.caption_hash = j.at("caption_hash").get<std::string>();
    for (const auto& s : j.at("statuses")) {
      r.judgment.event_ids.push_back(s.at("id").get<std::string>());
      r.judgment.statuses.push_back(parse_status(s.at("status").get<std::string>()));
    }
    for (const auto& x : j.at("extras")) {
      const auto& span = x.at("span");
      r.judgment.extras.push_back({x.at("text").get<std::string>(), span.at(0).get<std::size_t>(),
                                   span.at(1).get<std::size_t>()});
    }
    r.metrics = metrics_from_json(j.at("rates"));
    return r;
  } catch (const json::exception& ex) {
    throw FormatError(std::string("bad judgment report: ") + ex.what());
  }
}

inline JudgmentReport make_report(const std::string& item_id, std::string_view caption, const Evaluation& ev) {
  return {item_id, content_hash(caption), ev.judgment, ev.metrics};
}

}  // namespace mrlab::metrics
