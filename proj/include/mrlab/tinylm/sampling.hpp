// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cstdint>
#include <functional>
#include <numeric>
#include <span>
#include <vector>

#include "mrlab/common/rng.hpp"
#include "mrlab/tinylm/transformer.hpp"

namespace mrlab::tinylm {

struct SamplerConfig {
  double top_p = 0.9;
  double temperature = 1.0;
  int max_new_tokens = 64;
  int eos = Vocab::kEos;

  void validate() const {
    if (!(top_p > 0.0 && top_p <= 1.0)) throw ArgumentError("top_p must be in (0, 1]");
    if (!(temperature > 0.0)) throw ArgumentError("temperature must be positive");
    if (max_new_tokens < 1) throw ArgumentError("max_new_tokens must be positive");
  }
};

/// Candidate set of one nucleus step, most probable first, renormalized.
struct NucleusSet {
  std::vector<int> ids;
  std::vector<double> probs;
};

/// Smallest probability-sorted prefix whose mass reaches top_p. Ties in
/// probability are ordered by lower token id.
inline NucleusSet nucleus_candidates(std::span<const double> probs, double top_p) {
  std::vector<int> order(probs.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return probs[a] > probs[b]; });
  NucleusSet set;
  double mass = 0.0;
  for (int id : order) {
    set.ids.push_back(id);
    set.probs.push_back(probs[static_cast<std::size_t>(id)]);
    mass += probs[static_cast<std::size_t>(id)];
    // The tolerance absorbs summation rounding when the mass lands exactly on top_p.
    if (mass >= top_p - 1e-12) break;
  }
  for (auto& p : set.probs) p /= mass;
  return set;
}

/// Softmax of logits / temperature.
inline std::vector<double> next_token_probs(const Eigen::Ref<const RowVector>& logits, double temperature) {
  const RowVector p = softmax(logits / temperature);
  return {p.data(), p.data() + p.size()};
}

/// Called once per sampling step with the candidate set and the chosen token.
using NucleusObserver = std::function<void(const NucleusSet&, int chosen)>;

inline int draw(const NucleusSet& set, Rng& rng) {
  const double u = rng.uniform();
  double acc = 0.0;
  for (std::size_t i = 0; i < set.ids.size(); ++i) {
    acc += set.probs[i];
    if (u < acc) return set.ids[i];
  }
  return set.ids.back();
}

/// Longest response that keeps prompt ⊕ response scoreable within the context.
inline int response_budget(const ModelConfig& cfg, std::size_t prompt_len, int max_new_tokens) {
  return std::min(max_new_tokens, cfg.context + 1 - static_cast<int>(prompt_len));
}

/// Top-p sampling; temperature is applied before truncation. Stops after EOS
/// (which is included) or at the length budget. Deterministic in `seed`.
inline TokenSequence nucleus_sample(PolicyView policy, const TokenSequence& prompt, const SamplerConfig& cfg,
                                    std::uint64_t seed, const NucleusObserver& observer = {}) {
  cfg.validate();
  if (prompt.empty()) throw ArgumentError("nucleus_sample: empty prompt");
  Rng rng(seed);
  TokenSequence seq(prompt);
  TokenSequence out;
  const int budget = response_budget(policy.config(), prompt.size(), cfg.max_new_tokens);
  while (static_cast<int>(out.size()) < budget) {
    const Matrix logits = forward_logits(policy, seq);
    const auto probs = next_token_probs(logits.row(logits.rows() - 1), cfg.temperature);
    const auto set = nucleus_candidates(probs, cfg.top_p);
    const int tok = draw(set, rng);
    if (observer) observer(set, tok);
    out.push_back(tok);
    seq.push_back(tok);
    if (tok == cfg.eos) break;
  }
  return out;
}

/// Argmax decoding, ties to the lowest token id.
inline TokenSequence greedy_decode(PolicyView policy, const TokenSequence& prompt, int max_new_tokens,
                                   int eos = Vocab::kEos) {
  if (prompt.empty()) throw ArgumentError("greedy_decode: empty prompt");
  TokenSequence seq(prompt);
  TokenSequence out;
  const int budget = response_budget(policy.config(), prompt.size(), max_new_tokens);
  while (static_cast<int>(out.size()) < budget) {
    const Matrix logits = forward_logits(policy, seq);
    const auto row = logits.row(logits.rows() - 1);
    int best = 0;
    for (int i = 1; i < row.size(); ++i)
      if (row(i) > row(best)) best = i;
    out.push_back(best);
    seq.push_back(best);
    if (best == eos) break;
  }
  return out;
}

}  // namespace mrlab::tinylm
