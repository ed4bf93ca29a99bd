// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <vector>

#include "mrlab/common/errors.hpp"
#include "mrlab/common/tensor.hpp"

namespace mrlab::lora {

/// Production defaults; the toy model uses a smaller rank.
inline constexpr int kDefaultRank = 128;
inline constexpr double kDefaultAlpha = 2.0;

/// Low-rank update for a set of dense layers. For target W (d_in x d_out) the
/// adapter holds A (d_in x r) and B (r x d_out); the effective weight is
/// W + alpha * A * B.
struct LoraAdapter {
  int rank = 0;
  double alpha = 0.0;
  std::vector<std::string> targets;
  /// Keyed "<target>.lora_a" / "<target>.lora_b".
  ParameterSet params;

  static std::string a_name(const std::string& target) { return target + ".lora_a"; }
  static std::string b_name(const std::string& target) { return target + ".lora_b"; }

  bool targets_layer(const std::string& layer) const { return params.count(a_name(layer)) != 0; }

  const Matrix& a(const std::string& target) const { return at(a_name(target)); }
  const Matrix& b(const std::string& target) const { return at(b_name(target)); }
  Matrix& a(const std::string& target) { return params.at(a_name(target)); }
  Matrix& b(const std::string& target) { return params.at(b_name(target)); }

  /// alpha * A * B for one target.
  Matrix delta(const std::string& target) const { return alpha * (a(target) * b(target)); }

 private:
  const Matrix& at(const std::string& key) const {
    auto it = params.find(key);
    if (it == params.end()) throw ArgumentError("adapter has no tensor " + key);
    return it->second;
  }
};

}  // namespace mrlab::lora
