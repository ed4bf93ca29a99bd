// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "mrlab/common/rng.hpp"
#include "mrlab/tinylm/batch.hpp"
#include "mrlab/tinylm/logprob.hpp"
#include "mrlab/tinylm/optim.hpp"

namespace mrlab::tinylm {

struct SftConfig {
  int steps = 1500;
  int batch = 16;
  double lr = 3e-3;
  int warmup = 50;
  /// Length of the cosine schedule; 0 means `steps`. A larger horizon stops
  /// training early on an otherwise unchanged schedule.
  int horizon = 0;
  double clip = 1.0;
  std::uint64_t seed = 1;
  int jobs = 1;
};

using StepCallback = std::function<void(int step, double loss)>;

/// Full-parameter supervised fine-tuning with Adam on token-mean cross-entropy.
/// Mini-batches are drawn with replacement from `data` using `cfg.seed`.
inline std::vector<double> train_sft(PolicyModel& model, std::span<const SftExample> data, const SftConfig& cfg,
                                     const StepCallback& on_step = {}) {
  if (data.empty()) throw ArgumentError("train_sft: empty dataset");
  if (cfg.horizon > 0 && cfg.horizon < cfg.steps) throw ArgumentError("train_sft: horizon shorter than steps");
  Adam adam;
  Rng rng(derive_seed(cfg.seed, 0x5f7));
  std::vector<double> losses;
  losses.reserve(static_cast<std::size_t>(cfg.steps));
  std::vector<const SftExample*> batch(static_cast<std::size_t>(cfg.batch));
  for (int step = 0; step < cfg.steps; ++step) {
    std::size_t n_tokens = 0;
    for (auto& ex : batch) {
      ex = &data[rng.below(data.size())];
      n_tokens += ex->target.size();
    }
    const double coeff = -1.0 / static_cast<double>(n_tokens);
    auto [loss, grads] =
        accumulate_gradients(model, GradTarget::kBackbone, batch.size(), cfg.jobs, [&](std::size_t i, Gradients& g) {
          auto scored = score_response(model, batch[i]->prompt, batch[i]->target);
          backprop_response(model, scored, coeff, g);
          return coeff * scored.logprob;
        });
    clip_global_norm(grads, cfg.clip);
    adam.step(model.parameters(), grads.backbone, warmup_cosine(step, cfg.horizon > 0 ? cfg.horizon : cfg.steps, cfg.warmup, cfg.lr));
    losses.push_back(loss);
    if (on_step) on_step(step, loss);
  }
  return losses;
}

}  // namespace mrlab::tinylm
