// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <vector>

#include "mrlab/common/parallel.hpp"
#include "mrlab/tinylm/transformer.hpp"

namespace mrlab::tinylm {

/// Evaluates fn(i, grads) -> loss for i in [0, n), each into its own gradient
/// buffer, and sums buffers and losses in index order. The result does not
/// depend on `jobs`.
template <typename Fn>
std::pair<double, Gradients> accumulate_gradients(PolicyView policy, GradTarget target, std::size_t n, int jobs,
                                                  Fn&& fn) {
  std::vector<Gradients> parts(n);
  std::vector<double> losses(n, 0.0);
  parallel_for(n, jobs, [&](std::size_t i) {
    parts[i] = Gradients::zeros_like(policy, target);
    losses[i] = fn(i, parts[i]);
  });
  Gradients total = Gradients::zeros_like(policy, target);
  double loss = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    total.add(parts[i]);
    loss += losses[i];
  }
  return {loss, std::move(total)};
}

}  // namespace mrlab::tinylm
