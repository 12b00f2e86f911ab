#include "melnet/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "melnet/rng.hpp"

namespace melnet {

GradCheckResult grad_check(const std::function<Tensor()>& f, std::vector<Tensor> inputs,
                           const GradCheckOptions& options) {
  for (auto& t : inputs) {
    if (!t.is_leaf()) throw GradError("grad_check inputs must be leaf tensors");
    t.set_requires_grad(true);
    t.zero_grad();
  }
  Tensor root = f();
  root.backward();

  // Probing needs values only; skip graph recording for the inputs.
  std::vector<std::vector<double>> analytic_grads;
  for (auto& t : inputs) {
    analytic_grads.emplace_back(t.numel(), 0.0);
    if (t.has_grad()) std::copy(t.grad().begin(), t.grad().end(), analytic_grads.back().begin());
    t.set_requires_grad(false);
  }

  GradCheckResult result;
  Rng rng(options.seed);
  const double h = options.step;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    Tensor& t = inputs[k];
    const auto& analytic = analytic_grads[k];

    std::vector<std::size_t> coords(t.numel());
    std::iota(coords.begin(), coords.end(), std::size_t{0});
    if (options.max_coords_per_input > 0 && coords.size() > options.max_coords_per_input) {
      rng.shuffle(coords);
      coords.resize(options.max_coords_per_input);
      std::sort(coords.begin(), coords.end());
    }
    auto values = t.mutable_data();
    for (std::size_t i : coords) {
      const double original = values[i];
      values[i] = original + h;
      const double up = f().item();
      values[i] = original - h;
      const double down = f().item();
      values[i] = original;
      const double numeric = (up - down) / (2.0 * h);
      const double denom = std::max({1.0, std::abs(analytic[i]), std::abs(numeric)});
      result.max_rel_error = std::max(result.max_rel_error, std::abs(analytic[i] - numeric) / denom);
      ++result.coords_checked;
    }
  }
  for (auto& t : inputs) t.set_requires_grad(true);
  return result;
}

}  // namespace melnet
