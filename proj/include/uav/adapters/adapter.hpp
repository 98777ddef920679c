#pragma once

#include <span>
#include <string>
#include <variant>

#include "uav/adapters/mlp.hpp"
#include "uav/adapters/qformer.hpp"

namespace uav {

using AdapterConfig = std::variant<MlpAdapterConfig, QFormerConfig>;

inline std::string adapter_family(const AdapterConfig& c) {
  return std::holds_alternative<MlpAdapterConfig>(c) ? "mlp" : "qformer";
}

inline int adapter_d_donor(const AdapterConfig& c) {
  return std::visit([](const auto& x) { return x.d_donor; }, c);
}
inline int adapter_d_decoder(const AdapterConfig& c) {
  return std::visit([](const auto& x) { return x.d_decoder; }, c);
}
inline int adapter_n_soft(const AdapterConfig& c) {
  return std::visit([](const auto& x) { return x.n_soft; }, c);
}

/// Closed-form number of trainable adapter parameters.
inline std::size_t param_count(const AdapterConfig& c) {
  return std::visit(
      [](const auto& x) -> std::size_t {
        if constexpr (std::is_same_v<std::decay_t<decltype(x)>, MlpAdapterConfig>) return mlp_param_count(x);
        else return qformer_param_count(x);
      },
      c);
}

/// One adapter family instance: configuration plus its parameters.
template <std::floating_point T>
class BasicAdapter {
 public:
  BasicAdapter(AdapterConfig config, BasicParamStore<T> params) : config_(std::move(config)), params_(std::move(params)) {
    std::visit([](const auto& x) { x.validate(); }, config_);
    // Layout check against a freshly initialised store.
    const auto reference = init_params(config_, RngState(0));
    if (reference.size() != params_.size()) throw ShapeError("adapter: parameter store does not match " + adapter_family(config_) + " layout");
    for (const auto& [name, e] : reference) {
      if (!params_.contains(name) || params_.at(name).shape() != e.tensor.shape())
        throw ShapeError("adapter: parameter '" + name + "' missing or misshapen");
    }
  }

  static BasicAdapter init(const AdapterConfig& config, RngState rng) { return BasicAdapter(config, init_params(config, rng)); }

  [[nodiscard]] const AdapterConfig& config() const { return config_; }
  [[nodiscard]] BasicParamStore<T>& params() { return params_; }
  [[nodiscard]] const BasicParamStore<T>& params() const { return params_; }

  [[nodiscard]] BasicSoftTokenMatrix<T> forward(const BasicTensor<T>& h, Mode mode, RngState& rng) const {
    return std::visit(
        [&](const auto& c) {
          if constexpr (std::is_same_v<std::decay_t<decltype(c)>, MlpAdapterConfig>) return mlp_forward(c, params_, h, mode, rng);
          else return qformer_forward(c, params_, h, mode, rng);
        },
        config_);
  }

  [[nodiscard]] BasicSoftTokenMatrix<T> forward(const Activation& a, Mode mode, RngState& rng) const {
    return forward(BasicTensor<T>({a.vector.size()}, std::vector<T>(a.vector.begin(), a.vector.end())), mode, rng);
  }

 private:
  static BasicParamStore<T> init_params(const AdapterConfig& config, RngState rng) {
    return std::visit(
        [&](const auto& c) {
          if constexpr (std::is_same_v<std::decay_t<decltype(c)>, MlpAdapterConfig>) return init_mlp_params<T>(c, rng);
          else return init_qformer_params<T>(c, rng);
        },
        config);
  }

  AdapterConfig config_;
  BasicParamStore<T> params_;
};

using Adapter = BasicAdapter<float>;

}  // namespace uav
