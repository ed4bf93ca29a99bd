// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <numbers>

#include "mrlab/common/tensor.hpp"
#include "mrlab/tinylm/transformer.hpp"

namespace mrlab::tinylm {

/// Adam with bias correction. Moments are created lazily per tensor name.
class Adam {
 public:
  Adam(double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8) : beta1_(beta1), beta2_(beta2), eps_(eps) {}

  /// Applies one update to every tensor in `params` that has a gradient.
  void step(ParameterSet& params, const ParameterSet& grads, double lr) {
    ++t_;
    const double c1 = 1.0 - std::pow(beta1_, t_);
    const double c2 = 1.0 - std::pow(beta2_, t_);
    for (const auto& [name, g] : grads) {
      Matrix& w = params.at(name);
      auto [mit, fresh_m] = m_.try_emplace(name, Matrix::Zero(g.rows(), g.cols()));
      auto [vit, fresh_v] = v_.try_emplace(name, Matrix::Zero(g.rows(), g.cols()));
      Matrix& m = mit->second;
      Matrix& v = vit->second;
      m = beta1_ * m + (1.0 - beta1_) * g;
      v = beta2_ * v + (1.0 - beta2_) * g.cwiseProduct(g);
      w.array() -= lr * (m.array() / c1) / ((v.array() / c2).sqrt() + eps_);
    }
  }

  int steps_taken() const { return t_; }

 private:
  double beta1_, beta2_, eps_;
  int t_ = 0;
  ParameterSet m_, v_;
};

/// Rescales gradients so their global L2 norm is at most max_norm; returns the
/// pre-clip norm.
inline double clip_global_norm(Gradients& grads, double max_norm) {
  const double norm = std::sqrt(grads.squared_norm());
  if (max_norm > 0.0 && norm > max_norm) grads.scale(max_norm / norm);
  return norm;
}

/// Linear warmup then cosine decay to `floor_fraction` of the peak rate.
inline double warmup_cosine(int step, int total, int warmup, double peak, double floor_fraction = 0.1) {
  if (warmup > 0 && step < warmup) return peak * static_cast<double>(step + 1) / warmup;
  const double span = std::max(1, total - warmup);
  const double progress = std::min(1.0, static_cast<double>(step - warmup) / span);
  const double cosine = 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
  return peak * (floor_fraction + (1.0 - floor_fraction) * cosine);
}

}  // namespace mrlab::tinylm
