// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mrlab/corpus/scene.hpp"
#include "mrlab/mrdpo/rounds.hpp"
#include "mrlab/tinylm/train.hpp"

namespace mrlab::mrdpo {

struct DataConfig {
  std::uint64_t seed = 1;
  int n_scenes = 4000;
  double held_out_fraction = 0.1;
  /// Train-split scenes whose sampled captions feed pair selection.
  int n_pair_scenes = 200;
  /// Held-out scenes used for the per-round curves.
  int n_eval_scenes = 200;
  corpus::CorpusConfig scenes;

  void validate() const {
    scenes.validate();
    if (n_scenes < 2) throw ArgumentError("data.n_scenes must be at least 2");
    if (!(held_out_fraction > 0.0 && held_out_fraction < 1.0)) throw ArgumentError("data.held_out_fraction must be in (0, 1)");
    if (n_pair_scenes < 1 || n_eval_scenes < 1) throw ArgumentError("data scene counts must be positive");
  }
};

/// End-to-end desk run: corpus, SFT, then MrDPO.
struct ExperimentConfig {
  DataConfig data;
  tinylm::ModelConfig model;
  std::uint64_t model_seed = 1;
  tinylm::SftConfig sft;
  MrdpoConfig mrdpo;

  void validate() const {
    data.validate();
    model.validate();
    if (sft.steps < 1 || sft.batch < 1) throw ArgumentError("sft.steps and sft.batch must be positive");
    if (sft.horizon != 0 && sft.horizon < sft.steps) throw ArgumentError("sft.horizon must be 0 or >= sft.steps");
    mrdpo.validate();
  }
};

/// Settings tuned for the toy corpus. The SFT run stops part-way through a
/// 1500-step schedule so the starting policy still makes errors; learning
/// rates keep the 2:2:1 round ratio at a scale the toy model responds to.
inline ExperimentConfig desk_experiment() {
  ExperimentConfig cfg;
  cfg.sft.steps = 750;
  cfg.sft.horizon = 1500;
  cfg.mrdpo.lrs = {2e-3, 2e-3, 1e-3};
  cfg.mrdpo.thresholds = {{0.05, -0.01}, table_thresholds(2), table_thresholds(3)};
  cfg.mrdpo.gdpo.lambda = 1.0;
  return cfg;
}

struct ExperimentData {
  std::vector<SftExample> sft_data;
  std::vector<corpus::Scene> pair_scenes;
  std::vector<corpus::Scene> eval_scenes;

  MrdpoInputs inputs() const { return {sft_data, pair_scenes, eval_scenes}; }
};

inline ExperimentData prepare_data(const DataConfig& cfg) {
  cfg.validate();
  auto split = corpus::split_scenes(corpus::make_scenes(static_cast<std::size_t>(cfg.n_scenes), cfg.seed, cfg.scenes),
                                    cfg.held_out_fraction);
  const auto n_pairs = static_cast<std::size_t>(cfg.n_pair_scenes);
  const auto n_eval = static_cast<std::size_t>(cfg.n_eval_scenes);
  if (split.train.size() < n_pairs || split.held_out.size() < n_eval)
    throw ArgumentError(fmt::format("corpus split too small: {} train / {} held-out scenes", split.train.size(),
                                    split.held_out.size()));
  ExperimentData d;
  for (const auto& s : split.train) d.sft_data.push_back(corpus::to_sft_example(s));
  d.pair_scenes.assign(split.train.begin(), split.train.begin() + static_cast<std::ptrdiff_t>(n_pairs));
  d.eval_scenes.assign(split.held_out.begin(), split.held_out.begin() + static_cast<std::ptrdiff_t>(n_eval));
  return d;
}

inline PolicyModel train_sft_model(const ExperimentConfig& cfg, const ExperimentData& data,
                                   const tinylm::StepCallback& on_step = {}) {
  auto model = PolicyModel::random(cfg.model, cfg.model_seed);
  auto sft = cfg.sft;
  sft.jobs = cfg.mrdpo.jobs;
  tinylm::train_sft(model, data.sft_data, sft, on_step);
  return model;
}

/// Held-out total error reduction of the last round relative to entry 0.
inline double relative_reduction(const std::vector<RoundRecord>& history) {
  if (history.size() < 2) return 0.0;
  const double start = history.front().held_out.total_rate;
  if (start <= 0.0) return 0.0;
  return (start - history.back().held_out.total_rate) / start;
}

struct Curve {
  std::string variant;
  std::vector<RoundRecord> history;
  /// Set when a round stopped the run early.
  std::string error;
};

struct Variant {
  std::string name;
  LossMode loss;
  ProxyMode proxy;
};

/// gDPO vs DPO and proxy vs direct; "gdpo-proxy" is the shared baseline.
inline std::vector<Variant> ablation_variants() {
  return {{"gdpo-proxy", LossMode::kGdpo, ProxyMode::kProxy},
          {"dpo-proxy", LossMode::kDpo, ProxyMode::kProxy},
          {"gdpo-direct", LossMode::kGdpo, ProxyMode::kDirect}};
}

/// Runs every variant from the same SFT model and data. A variant whose round
/// selects no pairs is reported with the rounds it completed.
inline std::vector<Curve> run_ablation(const PolicyModel& sft_model, const MrdpoInputs& in, const MrdpoConfig& base,
                                       const metrics::JudgeBackend& judge, const std::vector<Variant>& variants,
                                       const std::function<void(const std::string&, const RoundRecord&)>& on_round = {}) {
  std::vector<Curve> curves;
  for (const auto& v : variants) {
    auto cfg = base;
    cfg.loss = v.loss;
    cfg.proxy = v.proxy;
    Curve c;
    c.variant = v.name;
    try {
      run_mrdpo(sft_model, in, cfg, judge, [&](const RoundRecord& r) {
        c.history.push_back(r);
        if (on_round) on_round(v.name, r);
      });
    } catch (const RoundError& ex) {
      c.error = ex.what();
    }
    curves.push_back(std::move(c));
  }
  return curves;
}

/// One JSON line per (variant, round), comparable across variants.
inline std::vector<json> curve_records(const std::vector<Curve>& curves) {
  std::vector<json> out;
  for (const auto& c : curves)
    for (const auto& r : c.history) {
      auto j = round_record_to_json(r);
      j["variant"] = c.variant;
      out.push_back(std::move(j));
    }
  return out;
}

}  // namespace mrlab::mrdpo
