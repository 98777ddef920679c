#pragma once

#include <cmath>
#include <optional>
#include <span>
#include <string>
#include <type_traits>
#include <vector>

#include "uav/core/digest.hpp"
#include "uav/core/errors.hpp"
#include "uav/core/ops.hpp"
#include "uav/core/param_store.hpp"
#include "uav/core/rng.hpp"

namespace uav {

struct TransformerConfig {
  int vocab_size = 256;
  int d_model = 48;
  int n_layers = 4;
  int n_heads = 4;
  int max_seq = 96;
  double dropout_p = 0.0;

  void validate() const {
    if (vocab_size <= 0 || d_model <= 0 || n_layers <= 0 || n_heads <= 0 || max_seq < 1)
      throw ConfigError("transformer config: dimensions must be positive");
    if (d_model % n_heads != 0)
      throw ConfigError("transformer config: n_heads " + std::to_string(n_heads) + " does not divide d_model " + std::to_string(d_model));
    if (!(dropout_p >= 0.0 && dropout_p < 1.0)) throw ConfigError("transformer config: dropout_p must lie in [0, 1)");
  }

  friend bool operator==(const TransformerConfig&, const TransformerConfig&) = default;
};

/// How fresh weights are drawn. `small` is the usual N(0, 0.02) language-model
/// init; `fan_in` uses N(0, 1/fan_in) weights and unit-variance embeddings,
/// which keeps a randomly initialised donor's attention far from uniform.
enum class InitScheme { small, fan_in };

/// Decoder-side low-rank adaptation: W acts as W + (alpha / rank) * A * B.
struct LoraSpec {
  int rank = 8;
  double alpha = 16.0;
  std::vector<std::string> targets{"query", "value"};

  [[nodiscard]] double scaling() const { return alpha / rank; }
  friend bool operator==(const LoraSpec&, const LoraSpec&) = default;
};

/// One donor hidden state with its provenance.
struct Activation {
  std::vector<float> vector;
  int layer = 0;
  int position = 0;
  std::string donor_id;
  std::string source_hash;
};

inline std::string token_hash(std::span<const int> tokens) {
  ByteWriter w;
  for (const int t : tokens) w.u32(static_cast<std::uint32_t>(t));
  return sha256_hex(w.bytes());
}

/// n soft tokens in the decoder embedding space, injected as a prefix.
template <std::floating_point T>
class BasicSoftTokenMatrix {
 public:
  explicit BasicSoftTokenMatrix(BasicTensor<T> rows) : rows_(std::move(rows)) {
    if (rows_.rank() != 2) throw ShapeError("soft tokens: expected (n x d), got " + shape_str(rows_.shape()));
  }
  [[nodiscard]] std::size_t count() const { return rows_.dim(0); }
  [[nodiscard]] std::size_t width() const { return rows_.dim(1); }
  [[nodiscard]] const BasicTensor<T>& tensor() const { return rows_; }

 private:
  BasicTensor<T> rows_;
};

using SoftTokenMatrix = BasicSoftTokenMatrix<float>;

inline const std::vector<std::string>& lora_target_names() {
  static const std::vector<std::string> names{"query", "key", "value", "output"};
  return names;
}

template <std::floating_point T>
struct LoraState {
  LoraSpec spec;
  BasicParamStore<T> params;
  bool merged = false;
};

/// Decoder-only transformer with pre-norm blocks, learned absolute positions
/// and an untied output head. Serves as both frozen donor and verbalizer
/// decoder; the decoder may additionally carry LoRA factors.
template <std::floating_point T>
class BasicTransformer {
 public:
  BasicTransformer(TransformerConfig config, BasicParamStore<T> params, std::string id = "transformer")
      : config_(config), params_(std::move(params)), id_(std::move(id)) {
    config_.validate();
    check_layout();
  }

  static BasicTransformer init(const TransformerConfig& config, RngState rng, InitScheme scheme = InitScheme::small,
                               std::string id = "transformer") {
    config.validate();
    const auto d = static_cast<std::size_t>(config.d_model);
    const auto v = static_cast<std::size_t>(config.vocab_size);
    const double emb_std = scheme == InitScheme::small ? 0.02 : 1.0;
    const auto w_std = [&](std::size_t fan_in) { return scheme == InitScheme::small ? 0.02 : 1.0 / std::sqrt(static_cast<double>(fan_in)); };
    BasicParamStore<T> p;
    p.add_normal("tok_emb", {v, d}, emb_std, rng, true);
    p.add_normal("pos_emb", {static_cast<std::size_t>(config.max_seq), d}, emb_std, rng, true);
    for (int l = 0; l < config.n_layers; ++l) {
      const std::string b = block_prefix(l);
      add_norm(p, b + "ln1", d);
      for (const auto& t : lora_target_names()) {
        p.add_normal(b + "attn." + t + ".weight", {d, d}, w_std(d), rng, true);
        p.add_constant(b + "attn." + t + ".bias", {d}, T{0}, true);
      }
      add_norm(p, b + "ln2", d);
      p.add_normal(b + "mlp.fc.weight", {d, 4 * d}, w_std(d), rng, true);
      p.add_constant(b + "mlp.fc.bias", {4 * d}, T{0}, true);
      p.add_normal(b + "mlp.proj.weight", {4 * d, d}, w_std(4 * d), rng, true);
      p.add_constant(b + "mlp.proj.bias", {d}, T{0}, true);
    }
    add_norm(p, "ln_f", d);
    p.add_normal("head.weight", {d, v}, w_std(d), rng, true);
    p.add_constant("head.bias", {v}, T{0}, true);
    return BasicTransformer(config, std::move(p), std::move(id));
  }

  [[nodiscard]] const TransformerConfig& config() const { return config_; }
  [[nodiscard]] const std::string& id() const { return id_; }
  [[nodiscard]] BasicParamStore<T>& params() { return params_; }
  [[nodiscard]] const BasicParamStore<T>& params() const { return params_; }

  [[nodiscard]] bool has_lora() const { return lora_.has_value(); }
  [[nodiscard]] LoraState<T>& lora() {
    if (!lora_) throw StateError("transformer: no LoRA attached");
    return *lora_;
  }
  [[nodiscard]] const LoraState<T>& lora() const {
    if (!lora_) throw StateError("transformer: no LoRA attached");
    return *lora_;
  }

  /// Attaches existing LoRA factors (e.g. loaded from a checkpoint).
  void attach_lora(const LoraSpec& spec, BasicParamStore<T> factors) {
    validate_lora_spec(spec);
    const auto d = static_cast<std::size_t>(config_.d_model);
    const auto r = static_cast<std::size_t>(spec.rank);
    for (int l = 0; l < config_.n_layers; ++l)
      for (const auto& t : spec.targets) {
        const auto base = block_prefix(l) + "attn." + t;
        if (!factors.contains(base + ".lora_a") || factors.at(base + ".lora_a").shape() != Shape{d, r} ||
            !factors.contains(base + ".lora_b") || factors.at(base + ".lora_b").shape() != Shape{r, d})
          throw ShapeError("lora: factors for '" + base + "' missing or misshapen");
      }
    if (factors.size() != 2 * spec.targets.size() * static_cast<std::size_t>(config_.n_layers))
      throw ShapeError("lora: unexpected extra factors");
    lora_ = LoraState<T>{spec, std::move(factors), false};
  }

  void detach_lora() { lora_.reset(); }

  void validate_lora_spec(const LoraSpec& spec) const {
    if (spec.rank <= 0 || !(spec.alpha > 0.0)) throw ConfigError("lora: rank and alpha must be positive");
    if (spec.rank > config_.d_model)
      throw ConfigError("lora: rank " + std::to_string(spec.rank) + " exceeds target dimension " + std::to_string(config_.d_model));
    if (spec.targets.empty()) throw ConfigError("lora: no target matrices");
    for (const auto& t : spec.targets) {
      if (!params_.contains(block_prefix(0) + "attn." + t + ".weight"))
        throw ConfigError("lora: target '" + t + "' is not a decoder matrix");
    }
  }

  /// Per-position vocabulary logits for [prefix rows ; token embeddings].
  [[nodiscard]] BasicTensor<T> forward(std::span<const int> tokens, const BasicSoftTokenMatrix<T>* prefix, Mode mode,
                                       RngState& rng) const {
    auto x = embed(tokens, prefix);
    for (int l = 0; l < config_.n_layers; ++l) x = block(x, l, mode, rng);
    x = layer_norm(x, params_.at("ln_f.gamma"), params_.at("ln_f.beta"));
    return linear(x, params_.at("head.weight"), params_.at("head.bias"));
  }

  [[nodiscard]] BasicTensor<T> forward(std::span<const int> tokens, Mode mode, RngState& rng) const {
    return forward(tokens, nullptr, mode, rng);
  }

  /// Residual stream after block `layer` (0-based), eval mode, no prefix.
  [[nodiscard]] BasicTensor<T> hidden_state(std::span<const int> tokens, int layer) const {
    if (layer < 0 || layer >= config_.n_layers)
      throw IndexError("hidden_state: layer " + std::to_string(layer) + " outside [0, " + std::to_string(config_.n_layers) + ")");
    RngState unused;
    auto x = embed(tokens, nullptr);
    for (int l = 0; l <= layer; ++l) x = block(x, l, Mode::eval, unused);
    return x;
  }

  static std::string block_prefix(int layer) { return "blocks." + std::to_string(layer) + "."; }

 private:
  static void add_norm(BasicParamStore<T>& p, const std::string& name, std::size_t d) {
    p.add_constant(name + ".gamma", {d}, T{1}, true);
    p.add_constant(name + ".beta", {d}, T{0}, true);
  }

  void check_layout() const {
    const auto d = static_cast<std::size_t>(config_.d_model);
    const auto expect = [&](const std::string& name, const Shape& s) {
      if (!params_.contains(name)) throw ShapeError("transformer: missing parameter '" + name + "'");
      if (params_.at(name).shape() != s)
        throw ShapeError("transformer: '" + name + "' has shape " + shape_str(params_.at(name).shape()) + ", expected " + shape_str(s));
    };
    expect("tok_emb", {static_cast<std::size_t>(config_.vocab_size), d});
    expect("pos_emb", {static_cast<std::size_t>(config_.max_seq), d});
    expect("head.weight", {d, static_cast<std::size_t>(config_.vocab_size)});
    for (int l = 0; l < config_.n_layers; ++l) {
      expect(block_prefix(l) + "mlp.fc.weight", {d, 4 * d});
      for (const auto& t : lora_target_names()) expect(block_prefix(l) + "attn." + t + ".weight", {d, d});
    }
    const std::size_t expected_entries = 6 + static_cast<std::size_t>(config_.n_layers) * 16;
    if (params_.size() != expected_entries) throw ShapeError("transformer: unexpected parameter count in store");
  }

  BasicTensor<T> embed(std::span<const int> tokens, const BasicSoftTokenMatrix<T>* prefix) const {
    const std::size_t n = prefix ? prefix->count() : 0;
    const std::size_t total = n + tokens.size();
    if (total == 0) throw SequenceLengthError("transformer: empty input");
    if (total > static_cast<std::size_t>(config_.max_seq))
      throw SequenceLengthError("transformer: " + std::to_string(total) + " positions exceed max_seq " + std::to_string(config_.max_seq));
    if (prefix && prefix->width() != static_cast<std::size_t>(config_.d_model))
      throw ShapeError("transformer: soft prefix width " + std::to_string(prefix->width()) + " != d_model " + std::to_string(config_.d_model));
    BasicTensor<T> x;
    if (!tokens.empty()) x = embedding(params_.at("tok_emb"), tokens);
    if (prefix) x = tokens.empty() ? prefix->tensor() : concat_rows(prefix->tensor(), x);
    std::vector<int> positions(total);
    for (std::size_t i = 0; i < total; ++i) positions[i] = static_cast<int>(i);
    return add(x, embedding(params_.at("pos_emb"), positions));
  }

  BasicTensor<T> project(const BasicTensor<T>& x, const std::string& prefix, const std::string& target) const {
    const std::string base = prefix + "attn." + target;
    auto y = linear(x, params_.at(base + ".weight"), params_.at(base + ".bias"));
    if (lora_ && lora_->params.contains(base + ".lora_a")) {
      const auto low = matmul(matmul(x, lora_->params.at(base + ".lora_a")), lora_->params.at(base + ".lora_b"));
      y = add(y, scale(low, static_cast<T>(lora_->spec.scaling())));
    }
    return y;
  }

  BasicTensor<T> block(const BasicTensor<T>& x, int layer, Mode mode, RngState& rng) const {
    const std::string b = block_prefix(layer);
    const auto heads = static_cast<std::size_t>(config_.n_heads);
    const double dh = static_cast<double>(config_.d_model) / config_.n_heads;
    const auto h = layer_norm(x, params_.at(b + "ln1.gamma"), params_.at(b + "ln1.beta"));
    const auto q = split_heads(project(h, b, "query"), heads);
    const auto k = split_heads(project(h, b, "key"), heads);
    const auto v = split_heads(project(h, b, "value"), heads);
    auto scores = causal_mask(scale(matmul(q, transpose_last2(k)), static_cast<T>(1.0 / std::sqrt(dh))));
    auto probs = dropout(softmax_last(scores), config_.dropout_p, mode, rng);
    const auto ctx = merge_heads(matmul(probs, v));
    auto out = add(x, dropout(project(ctx, b, "output"), config_.dropout_p, mode, rng));
    const auto h2 = layer_norm(out, params_.at(b + "ln2.gamma"), params_.at(b + "ln2.beta"));
    const auto m = linear(gelu(linear(h2, params_.at(b + "mlp.fc.weight"), params_.at(b + "mlp.fc.bias"))),
                          params_.at(b + "mlp.proj.weight"), params_.at(b + "mlp.proj.bias"));
    return add(out, dropout(m, config_.dropout_p, mode, rng));
  }

  TransformerConfig config_;
  BasicParamStore<T> params_;
  std::optional<LoraState<T>> lora_;
  std::string id_;
};

using Transformer = BasicTransformer<float>;

/// Hidden state of a frozen donor after block `layer` at `position`.
template <std::floating_point T>
Activation extract_activation(const BasicTransformer<T>& donor, std::span<const int> tokens, int layer, int position) {
  if (donor.params().parameter_count(true) != 0) throw StateError("extract_activation: donor must be frozen");
  if (position < 0 || static_cast<std::size_t>(position) >= tokens.size())
    throw IndexError("extract_activation: position " + std::to_string(position) + " outside sequence of " + std::to_string(tokens.size()));
  const auto hidden = donor.hidden_state(tokens, layer);
  const auto d = hidden.dim(1);
  Activation a;
  a.vector.assign(hidden.data().begin() + static_cast<std::ptrdiff_t>(position * d),
                  hidden.data().begin() + static_cast<std::ptrdiff_t>((position + 1) * d));
  a.layer = layer;
  a.position = position;
  a.donor_id = donor.id();
  a.source_hash = token_hash(tokens);
  return a;
}

/// Returns a copy of `base` with fresh LoRA factors on every target matrix.
/// The base weights are frozen; A ~ N(0, 1/d), B = 0 so outputs are unchanged.
template <std::floating_point T>
BasicTransformer<T> apply_lora(const BasicTransformer<T>& base, const LoraSpec& spec, RngState rng) {
  base.validate_lora_spec(spec);
  BasicTransformer<T> out = base;
  out.params().set_all_trainable(false);
  const auto d = static_cast<std::size_t>(base.config().d_model);
  const auto r = static_cast<std::size_t>(spec.rank);
  BasicParamStore<T> factors;
  for (int l = 0; l < base.config().n_layers; ++l)
    for (const auto& t : spec.targets) {
      const auto name = BasicTransformer<T>::block_prefix(l) + "attn." + t;
      factors.add_normal(name + ".lora_a", {d, r}, 1.0 / std::sqrt(static_cast<double>(d)), rng, true);
      factors.add_constant(name + ".lora_b", {r, d}, T{0}, true);
    }
  out.attach_lora(spec, std::move(factors));
  return out;
}

/// Folds (alpha / rank) * A * B into the base weights and returns a plain store.
/// Marks the decoder as merged; merging again raises StateError.
template <std::floating_point T>
BasicParamStore<T> merge_lora(BasicTransformer<T>& decoder) {
  auto& state = decoder.lora();
  if (state.merged) throw StateError("merge_lora: LoRA factors were already merged");
  BasicParamStore<T> merged = decoder.params();
  const auto d = static_cast<std::size_t>(decoder.config().d_model);
  const auto r = static_cast<std::size_t>(state.spec.rank);
  const double s = state.spec.scaling();
  for (int l = 0; l < decoder.config().n_layers; ++l)
    for (const auto& t : state.spec.targets) {
      const auto name = BasicTransformer<T>::block_prefix(l) + "attn." + t;
      const auto a = state.params.at(name + ".lora_a").data();
      const auto b = state.params.at(name + ".lora_b").data();
      std::vector<T> w(merged.at(name + ".weight").data().begin(), merged.at(name + ".weight").data().end());
      for (std::size_t i = 0; i < d; ++i)
        for (std::size_t j = 0; j < d; ++j) {
          double acc = 0.0;
          for (std::size_t p = 0; p < r; ++p) acc += static_cast<double>(a[i * r + p]) * b[p * d + j];
          w[i * d + j] = static_cast<T>(w[i * d + j] + s * acc);
        }
      merged.assign(name + ".weight", BasicTensor<T>({d, d}, std::move(w)));
    }
  state.merged = true;
  return merged;
}

/// Greedy continuation of `prompt` after an optional soft prefix. Stops at
/// `eos` (not included), after `max_new` tokens, or when max_seq is reached.
template <std::floating_point T>
std::vector<int> greedy_decode(const BasicTransformer<T>& decoder, const std::type_identity_t<BasicSoftTokenMatrix<T>>* prefix, std::span<const int> prompt,
                               int max_new, int eos) {
  std::vector<int> seq(prompt.begin(), prompt.end());
  std::vector<int> out;
  const std::size_t n = prefix ? prefix->count() : 0;
  RngState unused;
  for (int step = 0; step < max_new; ++step) {
    if (n + seq.size() > static_cast<std::size_t>(decoder.config().max_seq)) break;
    const auto logits = decoder.forward(seq, prefix, Mode::eval, unused);
    const auto v = static_cast<std::size_t>(decoder.config().vocab_size);
    const auto last = logits.data().subspan((logits.dim(0) - 1) * v, v);
    const int next = static_cast<int>(std::max_element(last.begin(), last.end()) - last.begin());
    if (next == eos) break;
    out.push_back(next);
    seq.push_back(next);
  }
  return out;
}

}  // namespace uav
