// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <vector>

#include "mrlab/common/errors.hpp"
#include "mrlab/gdpo/losses.hpp"

namespace mrlab::mrdpo {

using gdpo::PreferencePair;

/// Minimum win-minus-lose improvements, as fractions (0.05 == 5 points).
struct Thresholds {
  double delta_e_min = 0.0;
  double delta_r_min = 0.0;
  bool operator==(const Thresholds&) const = default;
};

/// Per-round selection thresholds: >=5% / >=1% in round 1, >=20% / >=-1% in
/// round 2, >=23% / >=-1% from round 3 on.
inline Thresholds table_thresholds(int round) {
  if (round < 1) throw ArgumentError("rounds are numbered from 1");
  if (round == 1) return {0.05, 0.01};
  if (round == 2) return {0.20, -0.01};
  return {0.23, -0.01};
}

/// 2e-5 for rounds 1-2, 1e-5 for round 3, 2e-6 afterwards.
inline double table_learning_rate(int round) {
  if (round < 1) throw ArgumentError("rounds are numbered from 1");
  if (round <= 2) return 2e-5;
  if (round == 3) return 1e-5;
  return 2e-6;
}

/// Slack for rates that are ratios of small integers (e.g. 0.23 vs 0.2299999).
inline constexpr double kThresholdSlack = 1e-9;

/// Inclusive comparison on both metrics; identical responses never pass.
inline bool keep_pair(const PreferencePair& p, const Thresholds& t) {
  if (p.y_win == p.y_lose) return false;
  return p.delta_e >= t.delta_e_min - kThresholdSlack && p.delta_r >= t.delta_r_min - kThresholdSlack;
}

/// Order-stable filter.
inline std::vector<PreferencePair> select_pairs(const std::vector<PreferencePair>& candidates, const Thresholds& t) {
  std::vector<PreferencePair> out;
  for (const auto& p : candidates)
    if (keep_pair(p, t)) out.push_back(p);
  return out;
}

}  // namespace mrlab::mrdpo
