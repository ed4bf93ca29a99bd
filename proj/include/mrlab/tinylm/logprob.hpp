// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <span>

#include "mrlab/tinylm/transformer.hpp"

namespace mrlab::tinylm {

/// Forward pass over prompt ⊕ response with the response log-probability.
struct ScoredResponse {
  double logprob = 0.0;
  std::size_t prompt_len = 0;
  TokenSequence response;
  ForwardCache cache;
};

inline ScoredResponse score_response(PolicyView policy, const TokenSequence& prompt, const TokenSequence& response) {
  if (response.empty()) throw ArgumentError("sequence_logprob: empty response");
  if (prompt.empty()) throw ArgumentError("sequence_logprob: empty prompt");
  TokenSequence input(prompt);
  input.insert(input.end(), response.begin(), response.end() - 1);

  ScoredResponse s;
  s.prompt_len = prompt.size();
  s.response = response;
  s.cache = forward(policy, input);
  for (std::size_t k = 0; k < response.size(); ++k) {
    const auto row = static_cast<Eigen::Index>(s.prompt_len - 1 + k);
    s.logprob += log_softmax(s.cache.logits.row(row))(response[k]);
  }
  return s;
}

/// Accumulates coeff * d(logprob)/d(params) into grads.
inline void backprop_response(PolicyView policy, const ScoredResponse& s, double coeff, Gradients& grads) {
  Matrix dlogits = Matrix::Zero(s.cache.logits.rows(), s.cache.logits.cols());
  for (std::size_t k = 0; k < s.response.size(); ++k) {
    const auto row = static_cast<Eigen::Index>(s.prompt_len - 1 + k);
    RowVector g = -softmax(s.cache.logits.row(row));
    g(s.response[k]) += 1.0;
    dlogits.row(row) = coeff * g;
  }
  backward(policy, s.cache, dlogits, grads);
}

/// log π(response | prompt): sum of per-token log-softmax entries.
inline double sequence_logprob(PolicyView policy, const TokenSequence& prompt, const TokenSequence& response) {
  return score_response(policy, prompt, response).logprob;
}

struct LossAndGrads {
  double loss = 0.0;
  Gradients grads;
};

/// Teacher-forced cross-entropy: mean negative log-likelihood over all target
/// tokens in the batch.
inline LossAndGrads sft_loss_and_grads(PolicyView policy, std::span<const SftExample> batch,
                                       GradTarget target = GradTarget::kBackbone) {
  if (batch.empty()) throw ArgumentError("sft_loss_and_grads: empty batch");
  std::size_t n_tokens = 0;
  for (const auto& ex : batch) n_tokens += ex.target.size();
  LossAndGrads out{0.0, Gradients::zeros_like(policy, target)};
  const double coeff = -1.0 / static_cast<double>(n_tokens);
  for (const auto& ex : batch) {
    auto scored = score_response(policy, ex.prompt, ex.target);
    out.loss += coeff * scored.logprob;
    backprop_response(policy, scored, coeff, out.grads);
  }
  return out;
}

/// Loss only (used by finite-difference checks and evaluation).
inline double sft_loss(PolicyView policy, std::span<const SftExample> batch) {
  std::size_t n_tokens = 0;
  double total = 0.0;
  for (const auto& ex : batch) {
    n_tokens += ex.target.size();
    total -= sequence_logprob(policy, ex.prompt, ex.target);
  }
  return total / static_cast<double>(n_tokens);
}

}  // namespace mrlab::tinylm
