// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "mrlab/common/errors.hpp"

namespace mrlab::metrics {

enum class Category { kSpeech, kSound, kVisual };

inline std::string_view to_string(Category c) {
  switch (c) {
    case Category::kSpeech: return "speech";
    case Category::kSound: return "sound";
    case Category::kVisual: return "visual";
  }
  return "visual";
}

inline Category parse_category(std::string_view s) {
  if (s == "speech") return Category::kSpeech;
  if (s == "sound") return Category::kSound;
  if (s == "visual") return Category::kVisual;
  throw FormatError("unknown event category: " + std::string(s));
}

inline bool is_audio(Category c) { return c != Category::kVisual; }

/// Structured form of a synthetic event: "<entity> <action> <modifier>".
struct EventAttributes {
  std::string entity;
  std::string action;
  std::string modifier;
  bool operator==(const EventAttributes&) const = default;
};

struct AtomicEvent {
  std::string id;
  std::string text;
  Category category = Category::kVisual;
  std::optional<EventAttributes> attributes;
  bool operator==(const AtomicEvent&) const = default;
};

enum class EventStatus { kCovered, kMissing, kIncorrect };

inline std::string_view to_string(EventStatus s) {
  switch (s) {
    case EventStatus::kCovered: return "covered";
    case EventStatus::kMissing: return "missing";
    case EventStatus::kIncorrect: return "incorrect";
  }
  return "missing";
}

inline EventStatus parse_status(std::string_view s) {
  if (s == "covered") return EventStatus::kCovered;
  if (s == "missing") return EventStatus::kMissing;
  if (s == "incorrect") return EventStatus::kIncorrect;
  throw FormatError("unknown event status: " + std::string(s));
}

/// A described event with no ground-truth counterpart. `span` is a half-open
/// word range into the caption, or empty when the judge gave no location.
struct ExtraEvent {
  std::string text;
  std::size_t span_begin = 0;
  std::size_t span_end = 0;
  bool operator==(const ExtraEvent&) const = default;
};

/// One status per ground-truth event (aligned with the event list) plus the
/// hallucinated extras.
struct EventJudgment {
  std::vector<std::string> event_ids;
  std::vector<EventStatus> statuses;
  std::vector<ExtraEvent> extras;

  std::size_t count(EventStatus s) const {
    std::size_t n = 0;
    for (auto x : statuses) n += (x == s);
    return n;
  }
  bool operator==(const EventJudgment&) const = default;
};

struct CaptionMetrics {
  double miss_rate = 0.0;
  double hall_rate = 0.0;
  double total_rate = 0.0;
  double repetition_rate = 0.0;
  bool operator==(const CaptionMetrics&) const = default;
};

}  // namespace mrlab::metrics
