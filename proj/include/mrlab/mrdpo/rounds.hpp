// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <fmt/format.h>

#include "mrlab/common/rng.hpp"
#include "mrlab/corpus/scene.hpp"
#include "mrlab/gdpo/losses.hpp"
#include "mrlab/lora/lora.hpp"
#include "mrlab/metrics/judge.hpp"
#include "mrlab/mrdpo/evaluate.hpp"
#include "mrlab/mrdpo/pairs.hpp"
#include "mrlab/mrdpo/selection.hpp"
#include "mrlab/tinylm/batch.hpp"
#include "mrlab/tinylm/checkpoint.hpp"
#include "mrlab/tinylm/optim.hpp"

namespace mrlab::mrdpo {

using lora::AdaptedModel;
using tinylm::PolicyModel;
using tinylm::SftExample;

enum class LossMode { kGdpo, kDpo };
enum class ProxyMode { kProxy, kDirect };

inline std::string to_string(LossMode m) { return m == LossMode::kGdpo ? "gdpo" : "dpo"; }
inline std::string to_string(ProxyMode m) { return m == ProxyMode::kProxy ? "proxy" : "direct"; }

struct RoundConfig {
  int round = 1;
  double lr = 2e-5;
  Thresholds thresholds = table_thresholds(1);
  int steps = 200;
  LossMode loss = LossMode::kGdpo;
  ProxyMode proxy = ProxyMode::kProxy;
  gdpo::GdpoConfig gdpo;
  /// Preference pairs per step; each pair brings `gt_per_pair` ground-truth examples.
  int batch_pairs = 8;
  int gt_per_pair = 1;
  double clip = 1.0;
  int lora_rank = 4;
  double lora_alpha = 2.0;
  std::uint64_t seed = 1;
  int jobs = 1;
};

struct MrdpoConfig {
  std::uint64_t seed = 1;
  int rounds = 3;
  int steps = 200;
  int batch_pairs = 8;
  int gt_per_pair = 1;
  /// Per-round learning rates; rounds beyond the list use the last entry, an
  /// empty list uses the default schedule.
  std::vector<double> lrs;
  /// Per-round thresholds, same convention as `lrs`.
  std::vector<Thresholds> thresholds;
  LossMode loss = LossMode::kGdpo;
  ProxyMode proxy = ProxyMode::kProxy;
  gdpo::GdpoConfig gdpo;
  int lora_rank = 4;
  double lora_alpha = 2.0;
  double clip = 1.0;
  tinylm::SamplerConfig sampler{0.9, 1.0, 48, tinylm::Vocab::kEos};
  int eval_max_new_tokens = 48;
  /// Extra ground-truth examples per step in the last round (0 disables).
  int final_round_sft_mix = 0;
  int jobs = 1;

  void validate() const {
    if (rounds < 0) throw ArgumentError("mrdpo.rounds must be non-negative");
    if (steps < 1) throw ArgumentError("mrdpo.steps must be positive");
    if (batch_pairs < 1) throw ArgumentError("mrdpo.batch_pairs must be positive");
    if (gt_per_pair < 0 || final_round_sft_mix < 0) throw ArgumentError("ground-truth counts must be non-negative");
    for (double lr : lrs)
      if (!(lr > 0.0)) throw ArgumentError("mrdpo.lrs entries must be positive");
    if (lora_rank < 1) throw ArgumentError("lora.rank must be positive");
    if (eval_max_new_tokens < 1) throw ArgumentError("mrdpo.eval_max_new_tokens must be positive");
    gdpo.validate();
    sampler.validate();
  }

  RoundConfig round_config(int t) const {
    RoundConfig rc;
    rc.round = t;
    rc.lr = lrs.empty() ? table_learning_rate(t) : lrs[std::min<std::size_t>(static_cast<std::size_t>(t - 1), lrs.size() - 1)];
    rc.thresholds = thresholds.empty()
                        ? table_thresholds(t)
                        : thresholds[std::min<std::size_t>(static_cast<std::size_t>(t - 1), thresholds.size() - 1)];
    rc.steps = steps;
    rc.loss = loss;
    rc.proxy = proxy;
    rc.gdpo = gdpo;
    rc.batch_pairs = batch_pairs;
    rc.gt_per_pair = gt_per_pair + (t == rounds ? final_round_sft_mix : 0);
    rc.clip = clip;
    rc.lora_rank = lora_rank;
    rc.lora_alpha = lora_alpha;
    rc.seed = derive_seed(seed, 0x7a11, static_cast<std::uint64_t>(t));
    rc.jobs = jobs;
    return rc;
  }
};

struct RoundRecord {
  int round = 0;
  std::size_t n_candidates = 0;
  std::size_t n_pairs = 0;
  double lr = 0.0;
  metrics::CaptionMetrics held_out;
  /// max |log pi_ref - log pi_prev_end| over the round's sampled responses.
  double ref_refresh_max_diff = 0.0;
  double first_loss = 0.0;
  double last_loss = 0.0;
  std::vector<double> losses;
};

struct MrdpoState {
  AdaptedModel policy;
  int round = 0;
  std::vector<RoundRecord> history;
};

/// Mean DPO term over the pairs plus lambda times the token-mean CE of the
/// ground-truth batch (lambda forced to 0 in DPO mode). Gradients go to the
/// adapter only and are reduced in item order.
inline tinylm::LossAndGrads round_step_loss(const AdaptedModel& policy, const std::vector<const PreferencePair*>& pairs,
                                            const std::vector<gdpo::ReferenceLogprobs>& refs,
                                            const std::vector<const SftExample*>& gt, const RoundConfig& rc) {
  const double lambda = rc.loss == LossMode::kGdpo ? rc.gdpo.lambda : 0.0;
  const double pair_weight = 1.0 / static_cast<double>(pairs.size());
  std::size_t gt_tokens = 0;
  for (const auto* ex : gt) gt_tokens += ex->target.size();
  const double ce_coeff = gt_tokens ? -1.0 / static_cast<double>(gt_tokens) : 0.0;
  const bool use_gt = lambda > 0.0 && gt_tokens > 0;
  const std::size_t n = pairs.size() + (use_gt ? gt.size() : 0);
  auto view = policy.view();
  auto [loss, grads] = tinylm::accumulate_gradients(
      view, tinylm::GradTarget::kAdapter, n, rc.jobs, [&](std::size_t i, tinylm::Gradients& g) {
        if (i < pairs.size()) return pair_weight * gdpo::accumulate_dpo(view, *pairs[i], refs[i], rc.gdpo.beta, pair_weight, g);
        const auto* ex = gt[i - pairs.size()];
        auto scored = tinylm::score_response(view, ex->prompt, ex->target);
        tinylm::backprop_response(view, scored, lambda * ce_coeff, g);
        return lambda * ce_coeff * scored.logprob;
      });
  return {loss, std::move(grads)};
}

/// One MrDPO round. `pairs` must have been selected from samples of the
/// policy as it stands at round start. Steps: (1) merge the previous adapter
/// (proxy mode), (2) attach a fresh adapter and freeze the merged backbone as
/// the reference, (3) train the adapter only.
inline MrdpoState run_round(MrdpoState state, const std::vector<PreferencePair>& pairs,
                            const std::vector<SftExample>& sft_data, const RoundConfig& rc,
                            const std::vector<corpus::Scene>& held_out, const metrics::JudgeBackend& judge,
                            int eval_max_new_tokens) {
  if (pairs.empty()) throw RoundError(fmt::format("round {}: no preference pairs selected", rc.round));
  if (rc.loss == LossMode::kGdpo && rc.gdpo.lambda > 0.0 && (sft_data.empty() || rc.gt_per_pair < 1))
    throw RoundError("gDPO needs ground-truth examples");

  const AdaptedModel previous = state.policy;
  if (rc.proxy == ProxyMode::kProxy || !state.policy.has_adapter()) {
    if (state.policy.has_adapter()) state.policy.merge();
    state.policy.attach_fresh(rc.lora_rank, rc.lora_alpha, derive_seed(rc.seed, 0xada));
  }
  const PolicyModel reference = state.policy.materialize();
  const PolicyModel backbone_at_start = state.policy.backbone();

  RoundRecord rec;
  rec.round = rc.round;
  rec.n_pairs = pairs.size();
  rec.lr = rc.lr;
  std::vector<gdpo::ReferenceLogprobs> refs(pairs.size());
  std::vector<double> diffs(pairs.size(), 0.0);
  parallel_for(pairs.size(), rc.jobs, [&](std::size_t i) {
    refs[i] = gdpo::reference_logprobs(reference, pairs[i]);
    const auto prev = gdpo::reference_logprobs(previous.view(), pairs[i]);
    diffs[i] = std::max(std::abs(prev.win - refs[i].win), std::abs(prev.lose - refs[i].lose));
  });
  for (double d : diffs) rec.ref_refresh_max_diff = std::max(rec.ref_refresh_max_diff, d);

  tinylm::Adam adam;
  Rng rng(derive_seed(rc.seed, 0xba7c));
  const std::size_t n_gt = rc.loss == LossMode::kGdpo ? static_cast<std::size_t>(rc.batch_pairs * rc.gt_per_pair) : 0;
  std::vector<const PreferencePair*> batch(static_cast<std::size_t>(rc.batch_pairs));
  std::vector<gdpo::ReferenceLogprobs> batch_refs(batch.size());
  std::vector<const SftExample*> gt(n_gt);
  for (int step = 0; step < rc.steps; ++step) {
    for (std::size_t k = 0; k < batch.size(); ++k) {
      const std::size_t idx = rng.below(pairs.size());
      batch[k] = &pairs[idx];
      batch_refs[k] = refs[idx];
    }
    for (auto& ex : gt) ex = &sft_data[rng.below(sft_data.size())];
    auto lg = round_step_loss(state.policy, batch, batch_refs, gt, rc);
    tinylm::clip_global_norm(lg.grads, rc.clip);
    adam.step(state.policy.adapter_parameters(), lg.grads.adapter, rc.lr);
    rec.losses.push_back(lg.loss);
  }
  rec.first_loss = rec.losses.front();
  rec.last_loss = rec.losses.back();

  for (const auto& [name, w] : backbone_at_start.parameters())
    if (!(state.policy.backbone().param(name).array() == w.array()).all())
      throw StateError("backbone changed during round " + std::to_string(rc.round));

  const PolicyModel evaluated = state.policy.materialize();
  rec.held_out = evaluate_policy(evaluated, held_out, judge, eval_max_new_tokens, rc.jobs).mean;
  state.round = rc.round;
  state.history.push_back(std::move(rec));
  return state;
}

struct MrdpoInputs {
  /// Ground-truth pool D_gt for the cross-entropy term.
  std::vector<SftExample> sft_data;
  /// Scenes whose sampled caption pairs feed preference selection.
  std::vector<corpus::Scene> pair_scenes;
  std::vector<corpus::Scene> held_out;
};

struct MrdpoResult {
  PolicyModel model;
  /// Entry 0 is the starting (SFT) model.
  std::vector<RoundRecord> history;
  std::vector<std::vector<PreferencePair>> pairs_by_round;
  std::vector<std::size_t> candidates_by_round;
};

using RoundCallback = std::function<void(const RoundRecord&)>;

/// Full multi-round run from an SFT checkpoint. Returns the merged final
/// policy; with zero rounds it is the input model unchanged.
inline MrdpoResult run_mrdpo(const PolicyModel& sft_model, const MrdpoInputs& in, const MrdpoConfig& cfg,
                             const metrics::JudgeBackend& judge, const RoundCallback& on_round = {}) {
  cfg.validate();
  MrdpoResult result;
  RoundRecord base;
  base.held_out = evaluate_policy(sft_model, in.held_out, judge, cfg.eval_max_new_tokens, cfg.jobs).mean;
  result.history.push_back(base);
  if (on_round) on_round(base);
  if (cfg.rounds == 0) {
    result.model = sft_model;
    return result;
  }

  MrdpoState state{AdaptedModel(sft_model), 0, {}};
  for (int t = 1; t <= cfg.rounds; ++t) {
    const RoundConfig rc = cfg.round_config(t);
    // Pairs come from the current policy; merging first would not change them.
    const PolicyModel sampler_model = state.policy.materialize();
    auto gen = generate_pairs(sampler_model, in.pair_scenes, cfg.sampler, derive_seed(rc.seed, 0x9a1), judge, t, cfg.jobs);
    auto selected = select_pairs(gen.candidates, rc.thresholds);
    state = run_round(std::move(state), selected, in.sft_data, rc, in.held_out, judge, cfg.eval_max_new_tokens);
    state.history.back().n_candidates = gen.candidates.size();
    result.candidates_by_round.push_back(gen.candidates.size());
    result.pairs_by_round.push_back(std::move(selected));
    result.history.push_back(state.history.back());
    if (on_round) on_round(state.history.back());
  }
  result.model = state.policy.materialize();
  return result;
}

inline json round_record_to_json(const RoundRecord& r) {
  return {{"round", r.round},
          {"n_pairs", r.n_pairs},
          {"n_candidates", r.n_candidates},
          {"lr", r.lr},
          {"held_out", {{"miss", r.held_out.miss_rate}, {"hall", r.held_out.hall_rate}, {"total", r.held_out.total_rate},
                        {"repetition", r.held_out.repetition_rate}}},
          {"ref_refresh_max_diff", r.ref_refresh_max_diff},
          {"first_loss", r.first_loss},
          {"last_loss", r.last_loss}};
}

inline RoundRecord round_record_from_json(const json& j) {
  try {
    RoundRecord r;
    r.round = j.at("round").get<int>();
    r.n_pairs = j.at("n_pairs").get<std::size_t>();
    r.n_candidates = j.value("n_candidates", std::size_t{0});
    r.lr = j.at("lr").get<double>();
    const auto& h = j.at("held_out");
    r.held_out.miss_rate = h.at("miss").get<double>();
    r.held_out.hall_rate = h.at("hall").get<double>();
    r.held_out.total_rate = h.at("total").get<double>();
    r.held_out.repetition_rate = h.value("repetition", 0.0);
    r.ref_refresh_max_diff = j.value("ref_refresh_max_diff", 0.0);
    r.first_loss = j.value("first_loss", 0.0);
    r.last_loss = j.value("last_loss", 0.0);
    return r;
  } catch (const json::exception& ex) {
    throw FormatError(std::string("bad round record: ") + ex.what());
  }
}

}  // namespace mrlab::mrdpo
