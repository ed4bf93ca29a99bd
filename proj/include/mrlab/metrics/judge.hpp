// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "mrlab/common/errors.hpp"
#include "mrlab/metrics/rates.hpp"
#include "mrlab/metrics/text.hpp"
#include "mrlab/metrics/types.hpp"

namespace mrlab::metrics {

class JudgeBackend {
 public:
  virtual ~JudgeBackend() = default;
  virtual EventJudgment judge(std::string_view caption, std::span<const AtomicEvent> events) const = 0;
  virtual std::string name() const = 0;
};

/// Deterministic judge for structured captions made of "entity action
/// modifier" clauses separated by commas.
///
/// The first clause that names a ground-truth entity decides that event:
/// covered when all words match, incorrect otherwise. A clause naming no
/// ground-truth entity is an extra. A later clause naming an already judged
/// entity is an extra unless it repeats the first clause verbatim (plain
/// repetition is left to the repetition rate).
class LexicalJudge final : public JudgeBackend {
 public:
  EventJudgment judge(std::string_view caption, std::span<const AtomicEvent> events) const override {
    if (events.empty()) throw ArgumentError("judge_caption: empty event list");
    const auto words = split_words(caption);

    std::map<std::string, std::size_t> by_entity;
    std::vector<std::vector<std::string>> expected(events.size());
    EventJudgment out;
    for (std::size_t i = 0; i < events.size(); ++i) {
      expected[i] = split_words(events[i].text);
      if (expected[i].empty()) throw ArgumentError("event " + events[i].id + " has empty text");
      if (!by_entity.emplace(expected[i].front(), i).second)
        throw ArgumentError("lexical judge needs distinct entities per item; repeated: " + expected[i].front());
      out.event_ids.push_back(events[i].id);
    }
    out.statuses.assign(events.size(), EventStatus::kMissing);

    std::vector<const Chunk*> first_mention(events.size(), nullptr);
    const auto chunks = split_chunks(words);
    for (const auto& chunk : chunks) {
      auto it = by_entity.find(chunk.words.front());
      if (it == by_entity.end()) {
        out.extras.push_back({join_words(words, chunk.begin, chunk.end), chunk.begin, chunk.end});
        continue;
      }
      const std::size_t e = it->second;
      if (first_mention[e] == nullptr) {
        first_mention[e] = &chunk;
        out.statuses[e] = chunk.words == expected[e] ? EventStatus::kCovered : EventStatus::kIncorrect;
      } else if (chunk.words != first_mention[e]->words) {
        out.extras.push_back({join_words(words, chunk.begin, chunk.end), chunk.begin, chunk.end});
      }
    }
    return out;
  }

  std::string name() const override { return "lexical"; }
};

inline EventJudgment judge_caption(std::string_view caption, std::span<const AtomicEvent> events,
                                   const JudgeBackend& judge) {
  if (events.empty()) throw ArgumentError("judge_caption: empty event list");
  auto j = judge.judge(caption, events);
  if (j.statuses.size() != events.size()) throw JudgeError("judge returned an incomplete status list");
  return j;
}

/// Judgment plus rates (including the repetition rate) for one caption.
struct Evaluation {
  EventJudgment judgment;
  CaptionMetrics metrics;
};

inline Evaluation evaluate_caption(std::string_view caption, std::span<const AtomicEvent> events,
                                   const JudgeBackend& judge) {
  Evaluation ev;
  ev.judgment = judge_caption(caption, events, judge);
  ev.metrics = caption_metrics(ev.judgment, events.size(), repetition_rate(caption));
  return ev;
}

}  // namespace mrlab::metrics
