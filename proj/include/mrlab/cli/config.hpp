// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <set>
#include <string>
#include <vector>

#include "mrlab/common/io.hpp"
#include "mrlab/mrdpo/experiment.hpp"

namespace mrlab::cli {

using mrdpo::ExperimentConfig;

inline json thresholds_to_json(const mrdpo::Thresholds& t) { return {{"delta_e", t.delta_e_min}, {"delta_r", t.delta_r_min}}; }

inline json experiment_to_json(const ExperimentConfig& c) {
  const auto& d = c.data;
  const auto& m = c.mrdpo;
  json thresholds = json::array();
  for (const auto& t : m.thresholds) thresholds.push_back(thresholds_to_json(t));
  return {
      {"data",
       {{"seed", d.seed},
        {"n_scenes", d.n_scenes},
        {"held_out_fraction", d.held_out_fraction},
        {"n_pair_scenes", d.n_pair_scenes},
        {"n_eval_scenes", d.n_eval_scenes},
        {"scenes",
         {{"min_events", d.scenes.min_events},
          {"max_events", d.scenes.max_events},
          {"weight_visual", d.scenes.weight_visual},
          {"weight_speech", d.scenes.weight_speech},
          {"weight_sound", d.scenes.weight_sound},
          {"min_audio", d.scenes.min_audio},
          {"n_distractors", d.scenes.n_distractors}}}}},
      {"model",
       {{"vocab", c.model.vocab},
        {"width", c.model.width},
        {"layers", c.model.layers},
        {"heads", c.model.heads},
        {"context", c.model.context},
        {"seed", c.model_seed}}},
      {"sft",
       {{"steps", c.sft.steps},
        {"horizon", c.sft.horizon},
        {"batch", c.sft.batch},
        {"lr", c.sft.lr},
        {"warmup", c.sft.warmup},
        {"clip", c.sft.clip},
        {"seed", c.sft.seed}}},
      {"mrdpo",
       {{"seed", m.seed},
        {"rounds", m.rounds},
        {"steps", m.steps},
        {"batch_pairs", m.batch_pairs},
        {"gt_per_pair", m.gt_per_pair},
        {"lrs", m.lrs},
        {"thresholds", thresholds},
        {"loss", mrdpo::to_string(m.loss)},
        {"proxy", mrdpo::to_string(m.proxy)},
        {"beta", m.gdpo.beta},
        {"lambda", m.gdpo.lambda},
        {"lora_rank", m.lora_rank},
        {"lora_alpha", m.lora_alpha},
        {"clip", m.clip},
        {"sampler",
         {{"top_p", m.sampler.top_p}, {"temperature", m.sampler.temperature}, {"max_new_tokens", m.sampler.max_new_tokens}}},
        {"eval_max_new_tokens", m.eval_max_new_tokens},
        {"final_round_sft_mix", m.final_round_sft_mix}}},
      {"jobs", m.jobs},
  };
}

namespace detail {

/// Reads fields of one JSON object; leftover keys are reported as unknown.
class ObjectReader {
 public:
  ObjectReader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(path_.empty() ? "<root>" : path_, "expected an object");
  }

  std::string field(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  template <class T>
  void get(const std::string& key, T& out) {
    auto it = j_.find(key);
    if (it == j_.end()) return;
    seen_.insert(key);
    try {
      if constexpr (std::is_integral_v<T>) {
        if (!it->is_number_integer()) throw ConfigError(field(key), "expected an integer");
      } else if constexpr (std::is_floating_point_v<T>) {
        if (!it->is_number()) throw ConfigError(field(key), "expected a number");
      } else if constexpr (std::is_same_v<T, std::string>) {
        if (!it->is_string()) throw ConfigError(field(key), "expected a string");
      }
      out = it->template get<T>();
    } catch (const json::exception& ex) {
      throw ConfigError(field(key), ex.what());
    }
  }

  const json* child(const std::string& key) {
    auto it = j_.find(key);
    if (it == j_.end()) return nullptr;
    seen_.insert(key);
    return &*it;
  }

  void finish() const {
    for (const auto& [key, value] : j_.items())
      if (!seen_.count(key)) throw ConfigError(field(key), "unknown key");
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

}  // namespace detail

/// Overlays `j` onto `base`. Unknown keys and mistyped values raise
/// ConfigError naming the dotted field path. Semantic checks run last.
inline ExperimentConfig experiment_from_json(const json& j, ExperimentConfig c = mrdpo::desk_experiment(),
                                             bool check = true) {
  using detail::ObjectReader;
  ObjectReader root(j, "");
  if (const json* dj = root.child("data")) {
    ObjectReader r(*dj, "data");
    r.get("seed", c.data.seed);
    r.get("n_scenes", c.data.n_scenes);
    r.get("held_out_fraction", c.data.held_out_fraction);
    r.get("n_pair_scenes", c.data.n_pair_scenes);
    r.get("n_eval_scenes", c.data.n_eval_scenes);
    if (const json* sj = r.child("scenes")) {
      ObjectReader s(*sj, "data.scenes");
      auto& sc = c.data.scenes;
      s.get("min_events", sc.min_events);
      s.get("max_events", sc.max_events);
      s.get("weight_visual", sc.weight_visual);
      s.get("weight_speech", sc.weight_speech);
      s.get("weight_sound", sc.weight_sound);
      s.get("min_audio", sc.min_audio);
      s.get("n_distractors", sc.n_distractors);
      s.finish();
    }
    r.finish();
  }
  if (const json* mj = root.child("model")) {
    ObjectReader r(*mj, "model");
    r.get("vocab", c.model.vocab);
    r.get("width", c.model.width);
    r.get("layers", c.model.layers);
    r.get("heads", c.model.heads);
    r.get("context", c.model.context);
    r.get("seed", c.model_seed);
    r.finish();
  }
  if (const json* sj = root.child("sft")) {
    ObjectReader r(*sj, "sft");
    r.get("steps", c.sft.steps);
    r.get("horizon", c.sft.horizon);
    r.get("batch", c.sft.batch);
    r.get("lr", c.sft.lr);
    r.get("warmup", c.sft.warmup);
    r.get("clip", c.sft.clip);
    r.get("seed", c.sft.seed);
    r.finish();
  }
  if (const json* pj = root.child("mrdpo")) {
    ObjectReader r(*pj, "mrdpo");
    auto& m = c.mrdpo;
    r.get("seed", m.seed);
    r.get("rounds", m.rounds);
    r.get("steps", m.steps);
    r.get("batch_pairs", m.batch_pairs);
    r.get("gt_per_pair", m.gt_per_pair);
    if (const json* lj = r.child("lrs")) {
      if (!lj->is_array()) throw ConfigError("mrdpo.lrs", "expected an array of numbers");
      m.lrs.clear();
      for (const auto& v : *lj) {
        if (!v.is_number()) throw ConfigError("mrdpo.lrs", "expected an array of numbers");
        m.lrs.push_back(v.get<double>());
      }
    }
    if (const json* tj = r.child("thresholds")) {
      if (!tj->is_array()) throw ConfigError("mrdpo.thresholds", "expected an array");
      m.thresholds.clear();
      for (std::size_t i = 0; i < tj->size(); ++i) {
        ObjectReader t((*tj)[i], fmt::format("mrdpo.thresholds[{}]", i));
        mrdpo::Thresholds th;
        t.get("delta_e", th.delta_e_min);
        t.get("delta_r", th.delta_r_min);
        t.finish();
        m.thresholds.push_back(th);
      }
    }
    std::string loss = mrdpo::to_string(m.loss);
    r.get("loss", loss);
    if (loss != "gdpo" && loss != "dpo") throw ConfigError("mrdpo.loss", "expected \"gdpo\" or \"dpo\"");
    m.loss = loss == "gdpo" ? mrdpo::LossMode::kGdpo : mrdpo::LossMode::kDpo;
    std::string proxy = mrdpo::to_string(m.proxy);
    r.get("proxy", proxy);
    if (proxy != "proxy" && proxy != "direct") throw ConfigError("mrdpo.proxy", "expected \"proxy\" or \"direct\"");
    m.proxy = proxy == "proxy" ? mrdpo::ProxyMode::kProxy : mrdpo::ProxyMode::kDirect;
    r.get("beta", m.gdpo.beta);
    r.get("lambda", m.gdpo.lambda);
    r.get("lora_rank", m.lora_rank);
    r.get("lora_alpha", m.lora_alpha);
    r.get("clip", m.clip);
    if (const json* sj = r.child("sampler")) {
      ObjectReader s(*sj, "mrdpo.sampler");
      s.get("top_p", m.sampler.top_p);
      s.get("temperature", m.sampler.temperature);
      s.get("max_new_tokens", m.sampler.max_new_tokens);
      s.finish();
    }
    r.get("eval_max_new_tokens", m.eval_max_new_tokens);
    r.get("final_round_sft_mix", m.final_round_sft_mix);
    r.finish();
  }
  root.get("jobs", c.mrdpo.jobs);
  root.finish();
  if (!check) return c;
  if (c.mrdpo.jobs < 1) throw ConfigError("jobs", "must be positive");
  try {
    c.validate();
  } catch (const ArgumentError& ex) {
    throw ConfigError("<config>", ex.what());
  }
  return c;
}

/// Applies "a.b.c=value" to `j`. The path must already exist; the value is
/// parsed as JSON when possible and taken as a string otherwise.
inline void apply_override(json& j, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError(assignment, "override must look like key.path=value");
  const std::string path = assignment.substr(0, eq);
  const std::string raw = assignment.substr(eq + 1);
  json* node = &j;
  for (std::size_t pos = 0; pos <= path.size();) {
    auto dot = path.find('.', pos);
    if (dot == std::string::npos) dot = path.size();
    const auto key = path.substr(pos, dot - pos);
    if (!node->is_object() || !node->contains(key)) throw ConfigError(path, "unknown key");
    node = &(*node)[key];
    pos = dot + 1;
  }
  json value = json::parse(raw, nullptr, false);
  *node = value.is_discarded() ? json(raw) : value;
}

/// Defaults, then the optional file, then overrides in order.
inline ExperimentConfig load_experiment(const std::filesystem::path& file, const std::vector<std::string>& overrides) {
  json j = experiment_to_json(mrdpo::desk_experiment());
  if (!file.empty()) {
    json user;
    try {
      user = json::parse(read_file(file));
    } catch (const json::parse_error& ex) {
      throw ConfigError(file.string(), ex.what());
    }
    // Validate the file on its own first so unknown keys are reported by path.
    experiment_from_json(user, mrdpo::desk_experiment(), false);
    j.merge_patch(user);
  }
  for (const auto& o : overrides) apply_override(j, o);
  return experiment_from_json(j);
}

}  // namespace mrlab::cli
