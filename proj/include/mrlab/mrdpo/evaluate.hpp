// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <vector>

#include "mrlab/common/parallel.hpp"
#include "mrlab/corpus/scene.hpp"
#include "mrlab/metrics/judge.hpp"
#include "mrlab/tinylm/sampling.hpp"

namespace mrlab::mrdpo {

struct HeldOutReport {
  metrics::CaptionMetrics mean;
  std::vector<metrics::CaptionMetrics> items;
  std::vector<tinylm::TokenSequence> captions;
  std::size_t skipped = 0;
};

/// Greedy captions for every scene, judged and averaged per item. Items the
/// judge cannot score are counted in `skipped`, never scored as zero.
inline HeldOutReport evaluate_policy(tinylm::PolicyView policy, const std::vector<corpus::Scene>& scenes,
                                     const metrics::JudgeBackend& judge, int max_new_tokens, int jobs = 1) {
  HeldOutReport r;
  r.captions.resize(scenes.size());
  std::vector<std::optional<metrics::CaptionMetrics>> scored(scenes.size());
  parallel_for(scenes.size(), jobs, [&](std::size_t i) {
    r.captions[i] = tinylm::greedy_decode(policy, corpus::make_prompt(scenes[i]), max_new_tokens, tinylm::Vocab::kEos);
    try {
      scored[i] = metrics::evaluate_caption(corpus::caption_text(r.captions[i]), scenes[i].events, judge).metrics;
    } catch (const JudgeError&) {
    }
  });
  for (auto& s : scored) {
    if (s) {
      r.items.push_back(*s);
    } else {
      ++r.skipped;
    }
  }
  r.mean = metrics::mean_metrics(r.items);
  return r;
}

}  // namespace mrlab::mrdpo
