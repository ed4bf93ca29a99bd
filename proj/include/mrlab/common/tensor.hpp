// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <map>
#include <string>

#include <Eigen/Dense>

namespace mrlab {

/// Row-major dense matrix; all parameters and activations are 64-bit.
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowVector = Eigen::Matrix<double, 1, Eigen::Dynamic>;

/// Named tensors, iterated in lexicographic name order.
using ParameterSet = std::map<std::string, Matrix>;

inline bool all_finite(const ParameterSet& params) {
  for (const auto& [_, m] : params)
    if (!m.allFinite()) return false;
  return true;
}

inline std::size_t count_elements(const ParameterSet& params) {
  std::size_t n = 0;
  for (const auto& [_, m] : params) n += static_cast<std::size_t>(m.size());
  return n;
}

}  // namespace mrlab
