#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "uav/core/errors.hpp"
#include "uav/core/param_store.hpp"
#include "uav/core/tensor.hpp"

namespace uav {

struct GradCheckOptions {
  double step = 1e-3;
  // Gradients smaller than this are compared on an absolute scale.
  double magnitude_floor = 1e-4;
  // Upper bound on probed elements per tensor; 0 probes everything.
  std::size_t max_per_tensor = 0;
};

struct GradCheckResult {
  double max_relative_error = 0.0;
  std::string worst_parameter;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  std::size_t probed = 0;
};

/// Compares reverse-mode gradients of the scalar `loss` against central
/// differences (f(x+h) - f(x-h)) / 2h for every trainable entry of `stores`.
///
/// `loss` must be deterministic (dropout in eval mode); two evaluations at the
/// same point must agree bit for bit or a DeterminismError is raised.
template <std::floating_point T>
GradCheckResult finite_diff_check(const std::function<BasicTensor<T>()>& loss, const std::vector<BasicParamStore<T>*>& stores,
                                  const GradCheckOptions& opts = {}) {
  if (!(opts.step > 0.0)) throw ConfigError("finite_diff_check: step must be positive");
  for (auto* s : stores) s->zero_grad();
  const BasicTensor<T> base = loss();
  const BasicTensor<T> again = loss();
  if (base.numel() != 1) throw ShapeError("finite_diff_check: loss must be scalar, got " + shape_str(base.shape()));
  if (base.item() != again.item()) throw DeterminismError("finite_diff_check: loss differs between identical evaluations");
  base.backward();

  GradCheckResult result;
  const T h = static_cast<T>(opts.step);
  for (auto* store : stores) {
    for (auto& [name, entry] : *store) {
      if (!entry.trainable) continue;
      auto& tensor = entry.tensor;
      const std::size_t n = tensor.numel();
      std::vector<T> analytic(n, T{0});
      if (tensor.has_grad()) std::copy(tensor.grad().begin(), tensor.grad().end(), analytic.begin());
      const std::size_t stride = (opts.max_per_tensor == 0 || n <= opts.max_per_tensor) ? 1 : (n + opts.max_per_tensor - 1) / opts.max_per_tensor;
      for (std::size_t i = 0; i < n; i += stride) {
        auto values = tensor.mutable_data();
        const T saved = values[i];
        values[i] = saved + h;
        const double up = loss().item();
        values[i] = saved - h;
        const double down = loss().item();
        values[i] = saved;
        const double numeric = (up - down) / (2.0 * static_cast<double>(h));
        const double a = analytic[i];
        const double denom = std::max({std::abs(numeric), std::abs(a), opts.magnitude_floor});
        const double rel = std::abs(numeric - a) / denom;
        ++result.probed;
        if (rel > result.max_relative_error || result.worst_parameter.empty()) {
          result.max_relative_error = std::max(rel, result.max_relative_error);
          if (rel >= result.max_relative_error) {
            result.worst_parameter = name;
            result.worst_index = i;
            result.worst_analytic = a;
            result.worst_numeric = numeric;
          }
        }
      }
    }
  }
  for (auto* s : stores) s->zero_grad();
  return result;
}

}  // namespace uav
