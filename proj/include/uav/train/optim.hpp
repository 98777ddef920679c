#pragma once

#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "uav/core/param_store.hpp"

namespace uav {

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
  double clip_norm = 1.0;  // <= 0 disables clipping

  void validate() const {
    if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) throw ConfigError("adamw: betas must lie in [0, 1)");
    if (!(eps > 0.0)) throw ConfigError("adamw: eps must be positive");
    if (weight_decay < 0.0) throw ConfigError("adamw: weight_decay must be non-negative");
  }
};

/// Moment buffers keyed by "group/parameter", created lazily for trainable
/// parameters only.
struct OptimState {
  struct Moments {
    std::vector<double> m;
    std::vector<double> v;
  };
  std::map<std::string, Moments> buffers;
  long step = 0;
};

template <std::floating_point T>
struct ParamGroup {
  std::string name;
  BasicParamStore<T>* store;
};

/// Square root of the summed squared gradients over every trainable tensor.
template <std::floating_point T>
double global_grad_norm(const std::vector<ParamGroup<T>>& groups) {
  double total = 0.0;
  for (const auto& g : groups)
    for (const auto& [name, e] : *g.store) {
      if (!e.trainable || !e.tensor.has_grad()) continue;
      for (const T x : e.tensor.grad()) total += static_cast<double>(x) * x;
    }
  return std::sqrt(total);
}

/// Decoupled-weight-decay Adam. Decay applies to matrices only; vectors
/// (biases, norm gains, shifts) are left undecayed. Gradients are cleared
/// after the update. Returns the pre-clip gradient norm.
template <std::floating_point T>
double adamw_step(const AdamWConfig& cfg, OptimState& state, const std::vector<ParamGroup<T>>& groups, double lr) {
  const double norm = global_grad_norm(groups);
  if (!std::isfinite(norm)) throw NonFiniteError("adamw: non-finite gradient norm");
  const double clip = (cfg.clip_norm > 0.0 && norm > cfg.clip_norm) ? cfg.clip_norm / norm : 1.0;
  ++state.step;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
  for (const auto& g : groups)
    for (auto& [name, e] : *g.store) {
      if (!e.trainable) continue;
      auto& buf = state.buffers[g.name + "/" + name];
      const auto n = e.tensor.numel();
      if (buf.m.empty()) {
        buf.m.assign(n, 0.0);
        buf.v.assign(n, 0.0);
      }
      auto w = e.tensor.mutable_data();
      const auto grad = e.tensor.grad();
      const bool decay = e.tensor.rank() >= 2 && cfg.weight_decay > 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        const double gi = grad.empty() ? 0.0 : static_cast<double>(grad[i]) * clip;
        buf.m[i] = cfg.beta1 * buf.m[i] + (1.0 - cfg.beta1) * gi;
        buf.v[i] = cfg.beta2 * buf.v[i] + (1.0 - cfg.beta2) * gi * gi;
        double wi = static_cast<double>(w[i]);
        if (decay) wi -= lr * cfg.weight_decay * wi;
        wi -= lr * (buf.m[i] / bc1) / (std::sqrt(buf.v[i] / bc2) + cfg.eps);
        w[i] = static_cast<T>(wi);
      }
      if (!std::isfinite(static_cast<double>(w[0]))) throw NonFiniteError("adamw: parameter '" + name + "' became non-finite");
      e.tensor.zero_grad();
    }
  return norm;
}

/// Linear warmup over the first `warmup_frac` of `total` steps, then constant.
inline double warmup_lr(double base, long step, long total, double warmup_frac) {
  const auto warm = static_cast<long>(std::ceil(warmup_frac * static_cast<double>(total)));
  if (warm <= 0 || step >= warm) return base;
  return base * static_cast<double>(step + 1) / static_cast<double>(warm);
}

}  // namespace uav
