#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "melnet/tensor.hpp"

namespace melnet {

struct GradCheckOptions {
  double step = 1e-6;
  /// Coordinates probed per input; 0 probes every coordinate. When fewer
  /// than all are probed they are drawn with `seed`.
  std::size_t max_coords_per_input = 0;
  std::uint64_t seed = 0;
};

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t coords_checked = 0;
};

/// Compares reverse-mode gradients of a scalar function against central
/// differences (f(x+h) - f(x-h)) / 2h. The per-coordinate error is
/// |analytic - numeric| / max(1, |analytic|, |numeric|).
///
/// `f` must read the current values of `inputs` on every call; inputs are
/// perturbed in place and restored afterwards.
GradCheckResult grad_check(const std::function<Tensor()>& f, std::vector<Tensor> inputs,
                           const GradCheckOptions& options = {});

}  // namespace melnet
