// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cmath>
#include <span>
#include <string>

#include "mrlab/metrics/types.hpp"
#include "mrlab/tinylm/batch.hpp"
#include "mrlab/tinylm/logprob.hpp"

namespace mrlab::gdpo {

using tinylm::GradTarget;
using tinylm::Gradients;
using tinylm::LossAndGrads;
using tinylm::PolicyView;
using tinylm::SftExample;
using tinylm::TokenSequence;

struct GdpoConfig {
  /// Not given by the method description; 0.1 is a conventional DPO choice.
  double beta = 0.1;
  double lambda = 0.1;

  void validate() const {
    if (!(beta > 0.0) || !std::isfinite(beta)) throw ArgumentError("gdpo.beta must be positive");
    if (!(lambda >= 0.0) || !std::isfinite(lambda)) throw ArgumentError("gdpo.lambda must be non-negative");
  }
};

/// Regularizer weights explored when tuning lambda.
inline constexpr std::array<double, 5> kLambdaSweep = {0.0, 0.01, 0.1, 1.0, 10.0};

struct PreferencePair {
  std::string item_id;
  int round = 0;
  TokenSequence x;
  TokenSequence y_win;
  TokenSequence y_lose;
  metrics::CaptionMetrics metrics_win;
  metrics::CaptionMetrics metrics_lose;
  double delta_e = 0.0;
  double delta_r = 0.0;
};

/// -log sigmoid(m), stable for large |m|.
inline double neg_log_sigmoid(double m) { return m >= 0.0 ? std::log1p(std::exp(-m)) : -m + std::log1p(std::exp(m)); }

/// d/dm of -log sigmoid(m) = -sigmoid(-m).
inline double neg_log_sigmoid_grad(double m) {
  return m >= 0.0 ? -std::exp(-m) / (1.0 + std::exp(-m)) : -1.0 / (1.0 + std::exp(m));
}

struct ReferenceLogprobs {
  double win = 0.0;
  double lose = 0.0;
};

inline ReferenceLogprobs reference_logprobs(PolicyView reference, const PreferencePair& pair) {
  return {tinylm::sequence_logprob(reference, pair.x, pair.y_win),
          tinylm::sequence_logprob(reference, pair.x, pair.y_lose)};
}

/// beta * [(log pi(y_w|x) - log ref(y_w|x)) - (log pi(y_l|x) - log ref(y_l|x))]
inline double dpo_margin(double policy_win, double policy_lose, const ReferenceLogprobs& ref, double beta) {
  return beta * ((policy_win - ref.win) - (policy_lose - ref.lose));
}

/// DPO term for one pair; accumulates `weight * dL/dθ` into grads. The
/// reference enters only through its precomputed log-probabilities.
inline double accumulate_dpo(PolicyView policy, const PreferencePair& pair, const ReferenceLogprobs& ref, double beta,
                             double weight, Gradients& grads) {
  auto win = tinylm::score_response(policy, pair.x, pair.y_win);
  auto lose = tinylm::score_response(policy, pair.x, pair.y_lose);
  const double m = dpo_margin(win.logprob, lose.logprob, ref, beta);
  const double dm = weight * neg_log_sigmoid_grad(m);
  tinylm::backprop_response(policy, win, dm * beta, grads);
  tinylm::backprop_response(policy, lose, -dm * beta, grads);
  return neg_log_sigmoid(m);
}

/// Token-mean cross-entropy toward ground truth; accumulates `weight * dCE/dθ`.
/// Returns the unweighted CE.
inline double accumulate_ground_truth_ce(PolicyView policy, std::span<const SftExample> gt_batch, double weight,
                                         Gradients& grads) {
  std::size_t n_tokens = 0;
  for (const auto& ex : gt_batch) n_tokens += ex.target.size();
  const double coeff = -1.0 / static_cast<double>(n_tokens);
  double ce = 0.0;
  for (const auto& ex : gt_batch) {
    auto scored = tinylm::score_response(policy, ex.prompt, ex.target);
    ce += coeff * scored.logprob;
    if (weight != 0.0) tinylm::backprop_response(policy, scored, weight * coeff, grads);
  }
  return ce;
}

/// Standard DPO loss -log sigmoid(margin); gradients flow only through `policy`.
inline LossAndGrads dpo_loss(PolicyView policy, PolicyView reference, const PreferencePair& pair, double beta,
                             GradTarget target = GradTarget::kAll) {
  if (!(beta > 0.0)) throw ArgumentError("dpo_loss: beta must be positive");
  if (policy.adapter == nullptr && target == GradTarget::kAll) target = GradTarget::kBackbone;
  LossAndGrads out{0.0, Gradients::zeros_like(policy, target)};
  out.loss = accumulate_dpo(policy, pair, reference_logprobs(reference, pair), beta, 1.0, out.grads);
  return out;
}

/// Guided DPO: DPO term plus lambda times the token-mean cross-entropy of the
/// ground-truth batch under the policy.
inline LossAndGrads gdpo_loss(PolicyView policy, PolicyView reference, const PreferencePair& pair,
                              std::span<const SftExample> gt_batch, const GdpoConfig& cfg,
                              GradTarget target = GradTarget::kAll) {
  cfg.validate();
  if (cfg.lambda > 0.0 && gt_batch.empty()) throw ArgumentError("gdpo_loss: empty ground-truth batch with lambda > 0");
  LossAndGrads out = dpo_loss(policy, reference, pair, cfg.beta, target);
  if (!gt_batch.empty()) out.loss += cfg.lambda * accumulate_ground_truth_ce(policy, gt_batch, cfg.lambda, out.grads);
  return out;
}

/// Loss values without gradients (finite-difference checks, diagnostics).
inline double dpo_loss_value(PolicyView policy, PolicyView reference, const PreferencePair& pair, double beta) {
  const auto ref = reference_logprobs(reference, pair);
  return neg_log_sigmoid(dpo_margin(tinylm::sequence_logprob(policy, pair.x, pair.y_win),
                                    tinylm::sequence_logprob(policy, pair.x, pair.y_lose), ref, beta));
}

inline double ground_truth_ce(PolicyView policy, std::span<const SftExample> gt_batch) {
  return tinylm::sft_loss(policy, gt_batch);
}

inline double gdpo_loss_value(PolicyView policy, PolicyView reference, const PreferencePair& pair,
                              std::span<const SftExample> gt_batch, const GdpoConfig& cfg) {
  double loss = dpo_loss_value(policy, reference, pair, cfg.beta);
  if (!gt_batch.empty()) loss += cfg.lambda * ground_truth_ce(policy, gt_batch);
  return loss;
}

}  // namespace mrlab::gdpo
