// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <tuple>
#include <vector>

#include "mrlab/common/errors.hpp"
#include "mrlab/common/io.hpp"

namespace mrlab::elo {

struct EloParams {
  double initial_mean = 1000.0;
  double log_base = 10.0;
  double scale = 400.0;
  double k_factor = 8.0;

  void validate() const {
    if (!(initial_mean > 0 && log_base > 0 && scale > 0 && k_factor > 0))
      throw ArgumentError("elo parameters must all be positive");
  }
};

enum class Winner { kA, kB, kTie };

inline std::string to_string(Winner w) {
  switch (w) {
    case Winner::kA: return "a";
    case Winner::kB: return "b";
    case Winner::kTie: return "tie";
  }
  return "tie";
}

inline Winner parse_winner(std::string_view s) {
  if (s == "a") return Winner::kA;
  if (s == "b") return Winner::kB;
  if (s == "tie") return Winner::kTie;
  throw FormatError("winner must be a, b or tie");
}

struct MatchRecord {
  std::string match_id;
  std::string model_a;
  std::string model_b;
  std::string item_id;
  Winner winner = Winner::kTie;
  std::string timestamp;
  bool operator==(const MatchRecord&) const = default;
};

inline json to_json(const MatchRecord& r) {
  return {{"match_id", r.match_id}, {"model_a", r.model_a}, {"model_b", r.model_b},
          {"item_id", r.item_id},   {"winner", to_string(r.winner)}, {"timestamp", r.timestamp}};
}

inline MatchRecord match_from_json(const json& j) {
  try {
    MatchRecord r{j.at("match_id").get<std::string>(), j.at("model_a").get<std::string>(),
                  j.at("model_b").get<std::string>(),  j.at("item_id").get<std::string>(),
                  parse_winner(j.at("winner").get<std::string>()), j.value("timestamp", std::string())};
    if (r.model_a == r.model_b) throw FormatError("match " + r.match_id + " pits a model against itself");
    return r;
  } catch (const json::exception& ex) {
    throw FormatError(std::string("bad match record: ") + ex.what());
  }
}

struct EloState {
  EloParams params;
  std::map<std::string, double> ratings;
  std::map<std::string, int> matches;

  /// Registers the model at the initial mean if unseen.
  double& rating(const std::string& model) { return ratings.try_emplace(model, params.initial_mean).first->second; }
  double rating_of(const std::string& model) const {
    auto it = ratings.find(model);
    return it == ratings.end() ? params.initial_mean : it->second;
  }
  void add_model(const std::string& model) {
    rating(model);
    matches.try_emplace(model, 0);
  }
};

/// 1 / (1 + base^((Rb - Ra) / scale))
inline double expected_score(double ra, double rb, const EloParams& p = {}) {
  return 1.0 / (1.0 + std::pow(p.log_base, (rb - ra) / p.scale));
}

/// R' = R + K (S - E) for both sides; B receives exactly the negated change.
inline void apply_match(EloState& state, const MatchRecord& r) {
  if (r.model_a == r.model_b) throw ArgumentError("apply_match: model_a equals model_b");
  state.add_model(r.model_a);
  state.add_model(r.model_b);
  double& ra = state.rating(r.model_a);
  double& rb = state.rating(r.model_b);
  const double sa = r.winner == Winner::kA ? 1.0 : r.winner == Winner::kB ? 0.0 : 0.5;
  const double delta = state.params.k_factor * (sa - expected_score(ra, rb, state.params));
  ra += delta;
  rb -= delta;
  ++state.matches[r.model_a];
  ++state.matches[r.model_b];
}

inline EloState replay(const std::vector<MatchRecord>& log, const EloParams& params = {},
                       const std::vector<std::string>& models = {}) {
  params.validate();
  EloState s;
  s.params = params;
  for (const auto& m : models) s.add_model(m);
  for (const auto& r : log) apply_match(s, r);
  return s;
}

inline std::vector<MatchRecord> read_match_log(const std::filesystem::path& path) {
  std::vector<MatchRecord> out;
  if (!std::filesystem::exists(path)) return out;
  for (const auto& j : read_jsonl(path)) out.push_back(match_from_json(j));
  return out;
}

/// Pair to be judged next; model identities stay server-side.
struct MatchShell {
  std::string model_a;
  std::string model_b;
  std::string item_id;
  bool operator==(const MatchShell&) const = default;
};

/// Chooses the model pair with the fewest comparisons so far, then the
/// closest ratings, then lexicographic order, and pairs it with the first
/// item in `items` that pair has not been shown. `taken` lists matches already
/// issued but not yet judged; they count as comparisons.
inline std::optional<MatchShell> schedule_next(const EloState& state, std::vector<std::string> models,
                                               const std::vector<std::string>& items,
                                               const std::vector<MatchShell>& history) {
  std::sort(models.begin(), models.end());
  models.erase(std::unique(models.begin(), models.end()), models.end());
  std::map<std::pair<std::string, std::string>, int> count;
  std::set<std::tuple<std::string, std::string, std::string>> shown;
  for (const auto& h : history) {
    auto key = std::minmax(h.model_a, h.model_b);
    ++count[{key.first, key.second}];
    shown.emplace(key.first, key.second, h.item_id);
  }
  std::optional<MatchShell> best;
  std::tuple<int, double> best_key{std::numeric_limits<int>::max(), 0.0};
  for (std::size_t i = 0; i < models.size(); ++i) {
    for (std::size_t j = i + 1; j < models.size(); ++j) {
      const auto& a = models[i];
      const auto& b = models[j];
      auto item = std::find_if(items.begin(), items.end(), [&](const std::string& it) { return !shown.count({a, b, it}); });
      if (item == items.end()) continue;
      const std::tuple<int, double> key{count[{a, b}], std::abs(state.rating_of(a) - state.rating_of(b))};
      // Pairs are visited in lexicographic order, so strict < keeps the earliest on ties.
      if (!best || key < best_key) {
        best = MatchShell{a, b, *item};
        best_key = key;
      }
    }
  }
  return best;
}

/// Ratings sorted from best to worst (name breaks ties).
inline std::vector<std::pair<std::string, double>> leaderboard(const EloState& s) {
  std::vector<std::pair<std::string, double>> out(s.ratings.begin(), s.ratings.end());
  std::stable_sort(out.begin(), out.end(), [](const auto& x, const auto& y) { return x.second > y.second; });
  return out;
}

}  // namespace mrlab::elo
