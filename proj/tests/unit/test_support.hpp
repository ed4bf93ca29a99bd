// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <string>

#include "mrlab/common/tensor.hpp"
#include "mrlab/tinylm/model.hpp"

namespace mrlab::check {

inline tinylm::ModelConfig tiny_config() {
  tinylm::ModelConfig cfg;
  cfg.vocab = 12;
  cfg.width = 8;
  cfg.layers = 2;
  cfg.heads = 2;
  cfg.context = 16;
  return cfg;
}

struct FdReport {
  double max_rel = 0.0;
  std::string worst;
};

/// Central finite differences over every element of `params`, compared with
/// the analytic gradient set. Relative error uses a 1e-6 floor on the scale.
template <typename LossFn>
FdReport finite_difference_check(ParameterSet& params, const ParameterSet& grads, LossFn&& loss, double eps = 1e-5) {
  FdReport report;
  for (auto& [name, w] : params) {
    const Matrix& g = grads.at(name);
    for (Eigen::Index i = 0; i < w.size(); ++i) {
      const double saved = w.data()[i];
      w.data()[i] = saved + eps;
      const double up = loss();
      w.data()[i] = saved - eps;
      const double down = loss();
      w.data()[i] = saved;
      const double numeric = (up - down) / (2.0 * eps);
      const double analytic = g.data()[i];
      const double rel = std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), 1e-6});
      if (rel > report.max_rel) {
        report.max_rel = rel;
        report.worst = name + "[" + std::to_string(i) + "]";
      }
    }
  }
  return report;
}

}  // namespace mrlab::check
