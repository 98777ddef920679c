#pragma once

#include <optional>
#include <string>

#include "uav/core/ops.hpp"
#include "uav/core/param_store.hpp"
#include "uav/model/transformer.hpp"

namespace uav {

/// LN -> GELU projection (hidden 2 * d_donor) -> optional GELU bottleneck ->
/// linear map to n * d, reshaped into n soft tokens.
struct MlpAdapterConfig {
  int d_donor = 64;
  int d_decoder = 48;
  int n_soft = 8;
  std::optional<int> bottleneck;
  double dropout_p = 0.1;

  [[nodiscard]] int hidden_dim() const { return 2 * d_donor; }
  [[nodiscard]] int output_input_dim() const { return bottleneck ? *bottleneck : hidden_dim(); }

  void validate() const {
    if (d_donor <= 0 || d_decoder <= 0) throw ConfigError("mlp adapter: dimensions must be positive");
    if (n_soft < 1) throw ConfigError("mlp adapter: n_soft must be at least 1");
    if (bottleneck && *bottleneck <= 0) throw ConfigError("mlp adapter: bottleneck must be positive");
    if (!(dropout_p >= 0.0 && dropout_p < 1.0)) throw ConfigError("mlp adapter: dropout_p must lie in [0, 1)");
  }

  friend bool operator==(const MlpAdapterConfig&, const MlpAdapterConfig&) = default;
};

inline std::size_t mlp_param_count(const MlpAdapterConfig& c) {
  c.validate();
  const std::size_t dd = static_cast<std::size_t>(c.d_donor);
  const std::size_t d1 = static_cast<std::size_t>(c.hidden_dim());
  const std::size_t ds = static_cast<std::size_t>(c.output_input_dim());
  const std::size_t out = static_cast<std::size_t>(c.n_soft) * static_cast<std::size_t>(c.d_decoder);
  std::size_t n = 2 * dd + (dd * d1 + d1) + (ds * out + out);
  if (c.bottleneck) n += d1 * ds + ds;
  return n;
}

template <std::floating_point T>
BasicParamStore<T> init_mlp_params(const MlpAdapterConfig& c, RngState rng) {
  c.validate();
  const auto dd = static_cast<std::size_t>(c.d_donor);
  const auto d1 = static_cast<std::size_t>(c.hidden_dim());
  const auto ds = static_cast<std::size_t>(c.output_input_dim());
  const auto out = static_cast<std::size_t>(c.n_soft * c.d_decoder);
  BasicParamStore<T> p;
  p.add_constant("ln.gamma", {dd}, T{1}, true);
  p.add_constant("ln.beta", {dd}, T{0}, true);
  p.add_normal("fc1.weight", {dd, d1}, 0.02, rng, true);
  p.add_constant("fc1.bias", {d1}, T{0}, true);
  if (c.bottleneck) {
    p.add_normal("bottleneck.weight", {d1, ds}, 0.02, rng, true);
    p.add_constant("bottleneck.bias", {ds}, T{0}, true);
  }
  p.add_normal("out.weight", {ds, out}, 0.02, rng, true);
  p.add_constant("out.bias", {out}, T{0}, true);
  return p;
}

template <std::floating_point T>
BasicSoftTokenMatrix<T> mlp_forward(const MlpAdapterConfig& c, const BasicParamStore<T>& p, const BasicTensor<T>& h, Mode mode,
                                    RngState& rng) {
  if (h.numel() != static_cast<std::size_t>(c.d_donor))
    throw ConfigError("mlp adapter: activation of size " + std::to_string(h.numel()) + " for d_donor " + std::to_string(c.d_donor));
  const auto row = reshape(h, {1, h.numel()});
  const auto normed = layer_norm(row, p.at("ln.gamma"), p.at("ln.beta"));
  auto z = dropout(gelu(linear(normed, p.at("fc1.weight"), p.at("fc1.bias"))), c.dropout_p, mode, rng);
  if (c.bottleneck) z = dropout(gelu(linear(z, p.at("bottleneck.weight"), p.at("bottleneck.bias"))), c.dropout_p, mode, rng);
  const auto y = linear(z, p.at("out.weight"), p.at("out.bias"));
  return BasicSoftTokenMatrix<T>(reshape(y, {static_cast<std::size_t>(c.n_soft), static_cast<std::size_t>(c.d_decoder)}));
}

}  // namespace uav
