// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <map>
#include <string>
#include <vector>

#include "mrlab/metrics/text.hpp"
#include "mrlab/metrics/types.hpp"

namespace mrlab::metrics {

inline constexpr std::size_t kRepetitionN = 5;

/// Fraction of words covered by a 5-gram whose text already occurred at an
/// earlier start position.
inline double repetition_rate(const std::vector<std::string>& words, std::size_t n = kRepetitionN) {
  if (words.size() < n || n == 0) return 0.0;
  std::vector<bool> marked(words.size(), false);
  std::map<std::vector<std::string>, std::size_t> seen;
  for (std::size_t i = 0; i + n <= words.size(); ++i) {
    std::vector<std::string> gram(words.begin() + static_cast<std::ptrdiff_t>(i),
                                  words.begin() + static_cast<std::ptrdiff_t>(i + n));
    if (seen.count(gram)) {
      for (std::size_t k = i; k < i + n; ++k) marked[k] = true;
    } else {
      seen.emplace(std::move(gram), i);
    }
  }
  std::size_t count = 0;
  for (bool m : marked) count += m;
  return static_cast<double>(count) / static_cast<double>(words.size());
}

inline double repetition_rate(std::string_view caption) { return repetition_rate(split_words(caption)); }

/// miss = #missing / n, hall = (#incorrect + #extra) / n, total = miss + hall.
inline CaptionMetrics caption_metrics(const EventJudgment& judgment, std::size_t n_events, double repetition = 0.0) {
  if (n_events == 0) throw ArgumentError("caption_metrics: no ground-truth events");
  if (judgment.statuses.size() != n_events)
    throw ArgumentError("caption_metrics: judgment does not cover every event");
  const double n = static_cast<double>(n_events);
  CaptionMetrics m;
  m.miss_rate = static_cast<double>(judgment.count(EventStatus::kMissing)) / n;
  m.hall_rate = static_cast<double>(judgment.count(EventStatus::kIncorrect) + judgment.extras.size()) / n;
  m.total_rate = m.miss_rate + m.hall_rate;
  m.repetition_rate = repetition;
  return m;
}

/// Unweighted per-item mean of each rate.
inline CaptionMetrics mean_metrics(const std::vector<CaptionMetrics>& items) {
  CaptionMetrics m;
  if (items.empty()) return m;
  for (const auto& x : items) {
    m.miss_rate += x.miss_rate;
    m.hall_rate += x.hall_rate;
    m.total_rate += x.total_rate;
    m.repetition_rate += x.repetition_rate;
  }
  const double n = static_cast<double>(items.size());
  m.miss_rate /= n;
  m.hall_rate /= n;
  m.total_rate /= n;
  m.repetition_rate /= n;
  return m;
}

}  // namespace mrlab::metrics
