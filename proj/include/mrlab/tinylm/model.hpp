// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "mrlab/common/errors.hpp"
#include "mrlab/common/rng.hpp"
#include "mrlab/common/tensor.hpp"
#include "mrlab/tinylm/vocab.hpp"

namespace mrlab::tinylm {

struct ModelConfig {
  int vocab = 64;
  int width = 32;
  int layers = 2;
  int heads = 1;
  int context = 128;

  void validate() const {
    if (vocab < 1) throw ArgumentError("model.vocab must be positive");
    if (width < 1) throw ArgumentError("model.width must be positive");
    if (layers < 0) throw ArgumentError("model.layers must be non-negative");
    if (heads < 1 || width % heads != 0) throw ArgumentError("model.heads must divide model.width");
    if (context < 1) throw ArgumentError("model.context must be positive");
  }

  bool operator==(const ModelConfig&) const = default;
};

inline std::string block_prefix(int layer) { return "blocks." + std::to_string(layer) + "."; }

/// Names of the dense matrices that LoRA adapters may target, in block order.
inline std::vector<std::string> dense_layer_names(const ModelConfig& cfg) {
  std::vector<std::string> names;
  for (int l = 0; l < cfg.layers; ++l) {
    const auto p = block_prefix(l);
    for (const char* n : {"attn.wq", "attn.wk", "attn.wv", "attn.wo", "mlp.w1", "mlp.w2"}) names.push_back(p + n);
  }
  return names;
}

/// Toy pre-norm transformer: token + position embeddings, `layers` blocks of
/// causal self-attention and a GELU MLP, final layer norm, untied output head.
/// Parameters live in a name-ordered map; a default-constructed parameter set
/// is all zeros (which yields uniform next-token distributions).
class PolicyModel {
 public:
  PolicyModel() = default;

  explicit PolicyModel(const ModelConfig& cfg) : cfg_(cfg) {
    cfg_.validate();
    const int d = cfg.width;
    const int v = cfg.vocab;
    auto zeros = [](int r, int c) { return Matrix::Zero(r, c); };
    params_["tok_emb"] = zeros(v, d);
    params_["pos_emb"] = zeros(cfg.context, d);
    for (int l = 0; l < cfg.layers; ++l) {
      const auto p = block_prefix(l);
      params_[p + "ln1.g"] = zeros(1, d);
      params_[p + "ln1.b"] = zeros(1, d);
      params_[p + "attn.wq"] = zeros(d, d);
      params_[p + "attn.wk"] = zeros(d, d);
      params_[p + "attn.wv"] = zeros(d, d);
      params_[p + "attn.wo"] = zeros(d, d);
      params_[p + "ln2.g"] = zeros(1, d);
      params_[p + "ln2.b"] = zeros(1, d);
      params_[p + "mlp.w1"] = zeros(d, 4 * d);
      params_[p + "mlp.b1"] = zeros(1, 4 * d);
      params_[p + "mlp.w2"] = zeros(4 * d, d);
      params_[p + "mlp.b2"] = zeros(1, d);
    }
    params_["ln_f.g"] = zeros(1, d);
    params_["ln_f.b"] = zeros(1, d);
    params_["head.w"] = zeros(d, v);
    params_["head.b"] = zeros(1, v);
  }

  /// Gaussian initialization; identical seeds give bit-identical parameters.
  static PolicyModel random(const ModelConfig& cfg, std::uint64_t seed) {
    PolicyModel m(cfg);
    Rng rng(derive_seed(seed, 0x1417));
    const double residual_scale = 1.0 / std::sqrt(2.0 * std::max(cfg.layers, 1));
    for (auto& [name, w] : m.params_) {
      const bool is_gain = name.ends_with(".g");
      const bool is_bias = name.ends_with(".b") || name.ends_with(".b1") || name.ends_with(".b2");
      if (is_gain) {
        w.setOnes();
        continue;
      }
      if (is_bias) continue;
      double stddev = 1.0 / std::sqrt(static_cast<double>(w.rows()));
      if (name == "tok_emb" || name == "pos_emb") stddev = 1.0;
      if (name.ends_with("attn.wo") || name.ends_with("mlp.w2")) stddev *= residual_scale;
      for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = stddev * rng.normal();
    }
    return m;
  }

  const ModelConfig& config() const { return cfg_; }
  ParameterSet& parameters() { return params_; }
  const ParameterSet& parameters() const { return params_; }

  const Matrix& param(const std::string& name) const {
    auto it = params_.find(name);
    if (it == params_.end()) throw ArgumentError("no parameter named " + name);
    return it->second;
  }
  Matrix& param(const std::string& name) {
    auto it = params_.find(name);
    if (it == params_.end()) throw ArgumentError("no parameter named " + name);
    return it->second;
  }

  std::size_t num_parameters() const { return count_elements(params_); }
  bool finite() const { return all_finite(params_); }

 private:
  ModelConfig cfg_;
  ParameterSet params_;
};

/// A (prompt, ground-truth response) training example.
struct SftExample {
  std::string item_id;
  TokenSequence prompt;
  TokenSequence target;
};

}  // namespace mrlab::tinylm
