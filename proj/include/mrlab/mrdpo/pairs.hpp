// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "mrlab/common/io.hpp"
#include "mrlab/common/parallel.hpp"
#include "mrlab/common/rng.hpp"
#include "mrlab/corpus/scene.hpp"
#include "mrlab/metrics/files.hpp"
#include "mrlab/metrics/judge.hpp"
#include "mrlab/mrdpo/selection.hpp"
#include "mrlab/tinylm/sampling.hpp"

namespace mrlab::mrdpo {

using tinylm::PolicyView;
using tinylm::TokenSequence;

/// Orders two judged samples so the lower total error wins (the first sample
/// wins ties) and fills the signed improvements.
inline PreferencePair orient_pair(std::string item_id, int round, TokenSequence x, TokenSequence a,
                                  const metrics::CaptionMetrics& ma, TokenSequence b,
                                  const metrics::CaptionMetrics& mb) {
  PreferencePair p;
  p.item_id = std::move(item_id);
  p.round = round;
  p.x = std::move(x);
  const bool a_wins = ma.total_rate <= mb.total_rate;
  p.y_win = a_wins ? std::move(a) : std::move(b);
  p.y_lose = a_wins ? std::move(b) : std::move(a);
  p.metrics_win = a_wins ? ma : mb;
  p.metrics_lose = a_wins ? mb : ma;
  p.delta_e = p.metrics_lose.total_rate - p.metrics_win.total_rate;
  p.delta_r = p.metrics_lose.repetition_rate - p.metrics_win.repetition_rate;
  return p;
}

struct PairGeneration {
  std::vector<PreferencePair> candidates;
  std::vector<std::string> skipped;  // item ids the judge failed on
};

/// Two nucleus samples per scene with distinct per-scene sub-seeds, each
/// judged against the scene's events. The model is only read.
inline PairGeneration generate_pairs(PolicyView policy, const std::vector<corpus::Scene>& scenes,
                                     const tinylm::SamplerConfig& sampler, std::uint64_t seed,
                                     const metrics::JudgeBackend& judge, int round = 0, int jobs = 1) {
  sampler.validate();
  std::vector<std::optional<PreferencePair>> slots(scenes.size());
  parallel_for(scenes.size(), jobs, [&](std::size_t i) {
    const auto& scene = scenes[i];
    const auto x = corpus::make_prompt(scene);
    auto a = tinylm::nucleus_sample(policy, x, sampler, derive_seed(seed, i, 0));
    auto b = tinylm::nucleus_sample(policy, x, sampler, derive_seed(seed, i, 1));
    try {
      const auto ma = metrics::evaluate_caption(corpus::caption_text(a), scene.events, judge).metrics;
      const auto mb = metrics::evaluate_caption(corpus::caption_text(b), scene.events, judge).metrics;
      slots[i] = orient_pair(scene.item_id, round, x, std::move(a), ma, std::move(b), mb);
    } catch (const JudgeError&) {
    }
  });
  PairGeneration out;
  for (std::size_t i = 0; i < slots.size(); ++i) {
    if (slots[i]) {
      out.candidates.push_back(std::move(*slots[i]));
    } else {
      out.skipped.push_back(scenes[i].item_id);
    }
  }
  return out;
}

inline json pair_to_json(const PreferencePair& p) {
  return {{"item_id", p.item_id},
          {"round", p.round},
          {"x", p.x},
          {"y_win", p.y_win},
          {"y_lose", p.y_lose},
          {"metrics_win", metrics::metrics_to_json(p.metrics_win)},
          {"metrics_lose", metrics::metrics_to_json(p.metrics_lose)},
          {"delta_e", p.delta_e},
          {"delta_r", p.delta_r}};
}

inline PreferencePair pair_from_json(const json& j) {
  try {
    PreferencePair p;
    p.item_id = j.at("item_id").get<std::string>();
    p.round = j.at("round").get<int>();
    p.x = j.at("x").get<TokenSequence>();
    p.y_win = j.at("y_win").get<TokenSequence>();
    p.y_lose = j.at("y_lose").get<TokenSequence>();
    p.metrics_win = metrics::metrics_from_json(j.at("metrics_win"));
    p.metrics_lose = metrics::metrics_from_json(j.at("metrics_lose"));
    p.delta_e = j.at("delta_e").get<double>();
    p.delta_r = j.at("delta_r").get<double>();
    return p;
  } catch (const json::exception& ex) {
    throw FormatError(std::string("bad pair record: ") + ex.what());
  }
}

}  // namespace mrlab::mrdpo
