// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <fmt/format.h>

#include "mrlab/common/errors.hpp"
#include "mrlab/common/rng.hpp"
#include "mrlab/lora/adapter.hpp"
#include "mrlab/tinylm/checkpoint.hpp"
#include "mrlab/tinylm/transformer.hpp"

namespace mrlab::lora {

using tinylm::PolicyModel;

/// A ~ N(0, 1/r), B = 0 for every target, so the fresh adapter is an exact
/// no-op on the forward pass.
inline LoraAdapter make_fresh_adapter(const PolicyModel& model, const std::vector<std::string>& targets, int rank,
                                      double alpha, std::uint64_t seed) {
  if (rank < 1) throw ArgumentError("lora rank must be positive");
  if (!(alpha >= 0.0) || !std::isfinite(alpha)) throw ArgumentError("lora alpha must be finite and non-negative");
  LoraAdapter adapter;
  adapter.rank = rank;
  adapter.alpha = alpha;
  adapter.targets = targets;
  Rng rng(derive_seed(seed, 0x10ea));
  const double stddev = 1.0 / std::sqrt(static_cast<double>(rank));
  for (const auto& t : targets) {
    const Matrix& w = model.param(t);
    if (rank > std::min(w.rows(), w.cols()))
      throw ArgumentError("lora rank " + std::to_string(rank) + " exceeds dimensions of " + t);
    Matrix a(w.rows(), rank);
    for (Eigen::Index i = 0; i < a.size(); ++i) a.data()[i] = stddev * rng.normal();
    adapter.params[LoraAdapter::a_name(t)] = std::move(a);
    adapter.params[LoraAdapter::b_name(t)] = Matrix::Zero(rank, w.cols());
  }
  return adapter;
}

/// Backbone with at most one active adapter.
class AdaptedModel {
 public:
  AdaptedModel() = default;
  explicit AdaptedModel(PolicyModel backbone) : backbone_(std::move(backbone)) {}

  const PolicyModel& backbone() const { return backbone_; }
  bool has_adapter() const { return adapter_.has_value(); }

  const LoraAdapter& adapter() const {
    if (!adapter_) throw StateError("no active adapter");
    return *adapter_;
  }
  LoraAdapter& adapter() {
    if (!adapter_) throw StateError("no active adapter");
    return *adapter_;
  }

  tinylm::PolicyView view() const { return {backbone_, adapter_ ? &*adapter_ : nullptr}; }

  /// Attaches a fresh adapter on every dense attention/MLP matrix.
  void attach_fresh(int rank, double alpha, std::uint64_t seed) {
    if (adapter_) throw StateError("attach_fresh: an adapter is already active");
    adapter_ = make_fresh_adapter(backbone_, tinylm::dense_layer_names(backbone_.config()), rank, alpha, seed);
  }

  /// Installs a given adapter (e.g. loaded from a checkpoint).
  void attach(LoraAdapter adapter) {
    if (adapter_) throw StateError("attach: an adapter is already active");
    for (const auto& t : adapter.targets) {
      const Matrix& w = backbone_.param(t);
      if (adapter.a(t).rows() != w.rows() || adapter.b(t).cols() != w.cols())
        throw ArgumentError("adapter shape does not match layer " + t);
    }
    adapter_ = std::move(adapter);
  }

  /// Folds W <- W + alpha * A * B into the backbone and deactivates the adapter.
  void merge() {
    if (!adapter_) throw StateError("merge: no active adapter");
    for (const auto& t : adapter_->targets) backbone_.param(t) += adapter_->delta(t);
    adapter_.reset();
  }

  /// Copy of the backbone with the active adapter folded in (if any).
  PolicyModel materialize() const {
    PolicyModel out = backbone_;
    if (adapter_)
      for (const auto& t : adapter_->targets) out.param(t) += adapter_->delta(t);
    return out;
  }

  ParameterSet& adapter_parameters() { return adapter().params; }

 private:
  PolicyModel backbone_;
  std::optional<LoraAdapter> adapter_;
};

inline AdaptedModel attach_fresh(PolicyModel model, int rank, double alpha, std::uint64_t seed) {
  AdaptedModel adapted(std::move(model));
  adapted.attach_fresh(rank, alpha, seed);
  return adapted;
}

inline PolicyModel merge(AdaptedModel adapted) {
  adapted.merge();
  return adapted.backbone();
}

/// Forward pass with the low-rank update applied on the fly: x W + alpha (x A) B.
inline Matrix adapted_forward(const AdaptedModel& adapted, std::span<const int> tokens) {
  return tinylm::forward_logits(adapted.view(), tokens);
}

inline tinylm::Checkpoint adapter_checkpoint(const LoraAdapter& adapter, int round) {
  tinylm::Checkpoint ckpt;
  ckpt.metadata["kind"] = "lora";
  ckpt.metadata["lora.rank"] = std::to_string(adapter.rank);
  ckpt.metadata["lora.alpha"] = fmt::format("{:.17g}", adapter.alpha);
  std::string targets;
  for (const auto& t : adapter.targets) targets += (targets.empty() ? "" : ",") + t;
  ckpt.metadata["lora.targets"] = targets;
  ckpt.metadata["round"] = std::to_string(round);
  ckpt.tensors = adapter.params;
  return ckpt;
}

inline LoraAdapter adapter_from_checkpoint(const tinylm::Checkpoint& ckpt) {
  auto get = [&](const std::string& key) -> const std::string& {
    auto it = ckpt.metadata.find(key);
    if (it == ckpt.metadata.end()) throw FormatError("adapter checkpoint missing " + key);
    return it->second;
  };
  if (get("kind") != "lora") throw FormatError("checkpoint is not a lora adapter");
  LoraAdapter adapter;
  adapter.rank = std::stoi(get("lora.rank"));
  adapter.alpha = std::stod(get("lora.alpha"));
  const auto& joined = get("lora.targets");
  for (std::size_t pos = 0; pos < joined.size();) {
    auto comma = joined.find(',', pos);
    if (comma == std::string::npos) comma = joined.size();
    adapter.targets.push_back(joined.substr(pos, comma - pos));
    pos = comma + 1;
  }
  adapter.params = ckpt.tensors;
  for (const auto& t : adapter.targets) {
    if (adapter.a(t).cols() != adapter.rank || adapter.b(t).rows() != adapter.rank)
      throw FormatError("adapter rank mismatch for " + t);
  }
  return adapter;
}

}  // namespace mrlab::lora
