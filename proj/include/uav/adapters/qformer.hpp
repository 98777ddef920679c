#pragma once

#include <cmath>
#include <string>

#include "uav/core/ops.hpp"
#include "uav/core/param_store.hpp"
#include "uav/model/transformer.hpp"

namespace uav {

/// Cross-attention adapter: the activation is expanded into M context slots
/// that n learned queries read through L pre-norm cross-attention blocks.
struct QFormerConfig {
  int d_donor = 64;
  int d_decoder = 48;
  int n_soft = 8;
  int context_slots = 8;
  int layers = 2;
  int heads = 4;
  int ffn_mult = 4;  // 0 disables the feed-forward sublayer
  double dropout_p = 0.1;

  void validate() const {
    if (d_donor <= 0 || d_decoder <= 0) throw ConfigError("qformer: dimensions must be positive");
    if (n_soft < 1 || context_slots < 1 || layers < 1) throw ConfigError("qformer: n_soft, context_slots and layers must be >= 1");
    if (heads < 1 || d_decoder % heads != 0)
      throw ConfigError("qformer: heads " + std::to_string(heads) + " must divide d_decoder " + std::to_string(d_decoder));
    if (ffn_mult < 0) throw ConfigError("qformer: ffn_mult must be non-negative");
    if (!(dropout_p >= 0.0 && dropout_p < 1.0)) throw ConfigError("qformer: dropout_p must lie in [0, 1)");
  }

  friend bool operator==(const QFormerConfig&, const QFormerConfig&) = default;
};

inline std::size_t qformer_param_count(const QFormerConfig& c) {
  c.validate();
  const std::size_t dd = static_cast<std::size_t>(c.d_donor);
  const std::size_t d = static_cast<std::size_t>(c.d_decoder);
  const std::size_t m = static_cast<std::size_t>(c.context_slots);
  const std::size_t r = static_cast<std::size_t>(c.ffn_mult);
  std::size_t per_block = 2 * d + 2 * d + d * d + 2 * d * d + d * d;
  if (r > 0) per_block += 2 * d + 2 * r * d * d;
  return (dd * m * d + m * d) + 2 * d + static_cast<std::size_t>(c.n_soft) * d + static_cast<std::size_t>(c.layers) * per_block + 2 * d;
}

template <std::floating_point T>
BasicParamStore<T> init_qformer_params(const QFormerConfig& c, RngState rng) {
  c.validate();
  const auto dd = static_cast<std::size_t>(c.d_donor);
  const auto d = static_cast<std::size_t>(c.d_decoder);
  const auto m = static_cast<std::size_t>(c.context_slots);
  const auto r = static_cast<std::size_t>(c.ffn_mult);
  BasicParamStore<T> p;
  const auto norm = [&](const std::string& name) {
    p.add_constant(name + ".gamma", {d}, T{1}, true);
    p.add_constant(name + ".beta", {d}, T{0}, true);
  };
  p.add_normal("ctx.weight", {dd, m * d}, 0.02, rng, true);
  p.add_constant("ctx.bias", {m * d}, T{0}, true);
  norm("ctx_norm");
  p.add_normal("queries", {static_cast<std::size_t>(c.n_soft), d}, 0.02, rng, true);
  for (int l = 0; l < c.layers; ++l) {
    const std::string b = "blocks." + std::to_string(l) + ".";
    norm(b + "norm_q");
    norm(b + "norm_c");
    p.add_normal(b + "w_q", {d, d}, 0.02, rng, true);
    p.add_normal(b + "w_kv", {d, 2 * d}, 0.02, rng, true);
    p.add_normal(b + "w_o", {d, d}, 0.02, rng, true);
    if (r > 0) {
      norm(b + "norm_ffn");
      p.add_normal(b + "ffn_in", {d, r * d}, 0.02, rng, true);
      p.add_normal(b + "ffn_out", {r * d, d}, 0.02, rng, true);
    }
  }
  norm("out_norm");
  return p;
}

/// C = LN_c(reshape(W_ctx h + b_ctx; M x d)).
template <std::floating_point T>
BasicTensor<T> qformer_context_slots(const QFormerConfig& c, const BasicParamStore<T>& p, const BasicTensor<T>& h) {
  if (h.numel() != static_cast<std::size_t>(c.d_donor))
    throw ConfigError("qformer: activation of size " + std::to_string(h.numel()) + " for d_donor " + std::to_string(c.d_donor));
  const auto flat = linear(reshape(h, {1, h.numel()}), p.at("ctx.weight"), p.at("ctx.bias"));
  const auto slots = reshape(flat, {static_cast<std::size_t>(c.context_slots), static_cast<std::size_t>(c.d_decoder)});
  return layer_norm(slots, p.at("ctx_norm.gamma"), p.at("ctx_norm.beta"));
}

template <std::floating_point T>
struct QFormerBlockOutput {
  BasicTensor<T> queries;    // n x d
  BasicTensor<T> attention;  // H x n x M, before dropout
};

/// One cross-attention block (queries attend to context slots only), followed
/// by the optional feed-forward update.
template <std::floating_point T>
QFormerBlockOutput<T> qformer_block(const QFormerConfig& c, const BasicParamStore<T>& p, const BasicTensor<T>& q_prev,
                                    const BasicTensor<T>& context, int layer, Mode mode, RngState& rng) {
  c.validate();
  const auto d = static_cast<std::size_t>(c.d_decoder);
  const auto heads = static_cast<std::size_t>(c.heads);
  const std::string b = "blocks." + std::to_string(layer) + ".";
  const auto q_hat = layer_norm(q_prev, p.at(b + "norm_q.gamma"), p.at(b + "norm_q.beta"));
  const auto c_hat = layer_norm(context, p.at(b + "norm_c.gamma"), p.at(b + "norm_c.beta"));
  const auto q = split_heads(matmul(q_hat, p.at(b + "w_q")), heads);
  const auto kv = matmul(c_hat, p.at(b + "w_kv"));
  const auto k = split_heads(slice_cols(kv, 0, d), heads);
  const auto v = split_heads(slice_cols(kv, d, 2 * d), heads);
  const double dh = static_cast<double>(d) / static_cast<double>(heads);
  const auto attn = softmax_last(scale(matmul(q, transpose_last2(k)), static_cast<T>(1.0 / std::sqrt(dh))));
  const auto mixed = merge_heads(matmul(dropout(attn, c.dropout_p, mode, rng), v));
  auto out = add(q_prev, dropout(matmul(mixed, p.at(b + "w_o")), c.dropout_p, mode, rng));
  if (c.ffn_mult > 0) {
    const auto normed = layer_norm(out, p.at(b + "norm_ffn.gamma"), p.at(b + "norm_ffn.beta"));
    const auto ff = matmul(gelu(matmul(normed, p.at(b + "ffn_in"))), p.at(b + "ffn_out"));
    out = add(out, dropout(ff, c.dropout_p, mode, rng));
  }
  return {out, attn};
}

template <std::floating_point T>
BasicSoftTokenMatrix<T> qformer_forward(const QFormerConfig& c, const BasicParamStore<T>& p, const BasicTensor<T>& h, Mode mode,
                                        RngState& rng) {
  const auto context = qformer_context_slots(c, p, h);
  BasicTensor<T> q = p.at("queries");
  for (int l = 0; l < c.layers; ++l) q = qformer_block(c, p, q, context, l, mode, rng).queries;
  const auto y = layer_norm(q, p.at("out_norm.gamma"), p.at("out_norm.beta"));
  return BasicSoftTokenMatrix<T>(dropout(y, c.dropout_p, mode, rng));
}

}  // namespace uav
