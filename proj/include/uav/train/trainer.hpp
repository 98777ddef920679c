#pragma once

#include <chrono>
#include <cmath>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "uav/train/losses.hpp"
#include "uav/train/optim.hpp"

namespace uav {

enum class Strategy { full, adapter_only_transfer };

inline std::string strategy_name(Strategy s) { return s == Strategy::full ? "full" : "aot"; }

struct StageBudget {
  int steps = 0;
  double lr = 1e-3;
};

struct TrainPlan {
  Strategy strategy = Strategy::full;
  std::uint64_t seed = 0;
  int donor_layer = 2;
  StageBudget pretrain{1500, 2e-3};
  StageBudget stage1{500, 1e-3};
  StageBudget stage2{500, 3e-4};
  int batch_size = 8;
  int grad_accum = 1;
  double warmup_frac = 0.05;
  AdamWConfig optim;
  int eval_every = 50;
  int val_max_examples = 64;
  bool aot_warmup = true;
  std::string source_lora_digest;  // required for adapter-only transfer

  void validate() const {
    const auto budget = [](const char* name, const StageBudget& b) {
      if (b.steps < 0) throw ConfigError(std::string("train plan: ") + name + " steps must be non-negative");
      if (!(b.lr > 0.0)) throw ConfigError(std::string("train plan: ") + name + " lr must be positive");
    };
    budget("pretrain", pretrain);
    budget("stage1", stage1);
    budget("stage2", stage2);
    if (batch_size < 1 || grad_accum < 1) throw ConfigError("train plan: batch_size and grad_accum must be >= 1");
    if (!(warmup_frac >= 0.0 && warmup_frac <= 1.0)) throw ConfigError("train plan: warmup_frac must lie in [0, 1]");
    if (eval_every < 1) throw ConfigError("train plan: eval_every must be >= 1");
    if (val_max_examples < 1) throw ConfigError("train plan: val_max_examples must be >= 1");
    if (donor_layer < 0) throw ConfigError("train plan: donor_layer must be non-negative");
    optim.validate();
    if (strategy == Strategy::adapter_only_transfer && source_lora_digest.empty())
      throw ConfigError("train plan: adapter-only transfer requires a source LoRA reference");
  }
};

struct LogRecord {
  std::string stage;
  long step = 0;
  std::string split;  // "train" or "val"
  double loss = 0.0;
  double lr = 0.0;
  double wall_ms = 0.0;
};

/// Line-delimited training log. wall_ms is the only field that varies
/// between otherwise identical runs.
class TrainLog {
 public:
  void add(LogRecord r) { records_.push_back(std::move(r)); }
  [[nodiscard]] const std::vector<LogRecord>& records() const { return records_; }

  [[nodiscard]] std::vector<LogRecord> select(const std::string& stage, const std::string& split) const {
    std::vector<LogRecord> out;
    for (const auto& r : records_)
      if (r.stage == stage && r.split == split) out.push_back(r);
    return out;
  }

  [[nodiscard]] std::string to_jsonl(bool with_wall = true) const {
    std::string out;
    for (const auto& r : records_) {
      nlohmann::ordered_json j;
      j["stage"] = r.stage;
      j["step"] = r.step;
      j["split"] = r.split;
      j["loss"] = r.loss;
      j["lr"] = r.lr;
      if (with_wall) j["wall_ms"] = r.wall_ms;
      out += j.dump() + "\n";
    }
    return out;
  }

 private:
  std::vector<LogRecord> records_;
};

struct StageResult {
  double first_train_loss = 0.0;     // batch loss at step 0, before any update
  double final_train_loss = 0.0;     // mean batch loss over the last tenth of steps
  std::optional<double> final_val_loss;
  long steps = 0;
};

namespace detail {

inline std::uint64_t stage_stream(const std::string& stage) {
  std::uint64_t h = 1469598103934665603ULL;  // FNV-1a
  for (const char c : stage) h = (h ^ static_cast<unsigned char>(c)) * 1099511628211ULL;
  return h;
}

/// Epoch-wise shuffled example order.
class Sampler {
 public:
  Sampler(std::size_t n, RngState rng) : rng_(rng), order_(n) {
    if (n == 0) throw ValidationError("trainer: empty training set");
    refill();
  }
  std::size_t next() {
    if (pos_ == order_.size()) refill();
    return order_[pos_++];
  }

 private:
  void refill() {
    for (std::size_t i = 0; i < order_.size(); ++i) order_[i] = i;
    shuffle(order_, rng_);
    pos_ = 0;
  }
  RngState rng_;
  std::vector<std::size_t> order_;
  std::size_t pos_ = 0;
};

template <std::floating_point T, typename Example>
using LossFn = std::function<BasicTensor<T>(const Example&, Mode, RngState&)>;

template <std::floating_point T, typename Example>
double mean_loss(const std::vector<Example>& data, std::size_t cap, const LossFn<T, Example>& loss) {
  const std::size_t n = std::min(cap, data.size());
  if (n == 0) throw ValidationError("trainer: empty evaluation set");
  RngState unused;
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) total += static_cast<double>(loss(data[i], Mode::eval, unused).item());
  return total / static_cast<double>(n);
}

/// Shared optimisation loop. `after_backward` runs once per step and is where
/// callers enforce their freezing contract.
template <std::floating_point T, typename Example>
StageResult run_stage(const std::string& stage, const std::vector<Example>& train, const std::vector<Example>& val, const StageBudget& budget,
                      const TrainPlan& plan, const std::vector<ParamGroup<T>>& groups, const LossFn<T, Example>& loss,
                      const std::function<void()>& after_backward, TrainLog& log) {
  plan.validate();
  StageResult result;
  result.steps = budget.steps;
  if (budget.steps == 0) return result;
  const RngState base = RngState(plan.seed).fork(stage_stream(stage));
  Sampler sampler(train.size(), base.fork(1));
  RngState noise = base.fork(2);
  OptimState state;
  const auto start = std::chrono::steady_clock::now();
  const auto elapsed = [&] { return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count(); };
  const int per_step = plan.batch_size * plan.grad_accum;
  const T weight = static_cast<T>(1.0 / per_step);
  const long tail = std::max<long>(1, budget.steps / 10);
  double tail_sum = 0.0;
  for (long step = 0; step < budget.steps; ++step) {
    const double lr = warmup_lr(budget.lr, step, budget.steps, plan.warmup_frac);
    double batch_loss = 0.0;
    for (int k = 0; k < per_step; ++k) {
      const auto l = loss(train[sampler.next()], Mode::train, noise);
      batch_loss += static_cast<double>(l.item());
      scale(l, weight).backward();
    }
    batch_loss /= per_step;
    after_backward();
    adamw_step(plan.optim, state, groups, lr);
    if (step == 0) result.first_train_loss = batch_loss;
    if (step >= budget.steps - tail) tail_sum += batch_loss;
    log.add({stage, step, "train", batch_loss, lr, elapsed()});
    if (!val.empty() && ((step + 1) % plan.eval_every == 0 || step + 1 == budget.steps)) {
      const double v = mean_loss<T, Example>(val, static_cast<std::size_t>(plan.val_max_examples), loss);
      result.final_val_loss = v;
      log.add({stage, step + 1, "val", v, lr, elapsed()});
    }
  }
  result.final_train_loss = tail_sum / static_cast<double>(tail);
  return result;
}

template <std::floating_point T>
void require_frozen_backbone(const BasicTransformer<T>& decoder, const char* who) {
  if (decoder.params().parameter_count(true) != 0) throw StateError(std::string(who) + ": decoder backbone must be frozen");
}

template <std::floating_point T>
void check_adapter_inputs(const BasicAdapter<T>& adapter, const Activation& a) {
  if (a.vector.size() != static_cast<std::size_t>(adapter_d_donor(adapter.config())))
    throw ConfigError("trainer: activation width " + std::to_string(a.vector.size()) + " does not match adapter d_donor " +
                      std::to_string(adapter_d_donor(adapter.config())));
}

}  // namespace detail

/// Next-token pretraining of the decoder backbone on raw text. The decoder is
/// left frozen afterwards.
template <std::floating_point T>
StageResult pretrain_decoder(BasicTransformer<T>& decoder, const std::vector<std::vector<int>>& train,
                             const std::vector<std::vector<int>>& val, const TrainPlan& plan, TrainLog& log) {
  if (decoder.has_lora()) throw StateError("pretrain: decoder already carries LoRA factors");
  decoder.params().set_all_trainable(true);
  const detail::LossFn<T, std::vector<int>> loss = [&](const std::vector<int>& t, Mode m, RngState& r) {
    return language_model_loss(decoder, t, m, r);
  };
  StageResult result;
  try {
    result = detail::run_stage<T, std::vector<int>>("pretrain", train, val, plan.pretrain, plan, {{"decoder", &decoder.params()}}, loss,
                                                    [] {}, log);
  } catch (...) {
    decoder.params().set_all_trainable(false);
    throw;
  }
  decoder.params().set_all_trainable(false);
  return result;
}

/// Activation-to-text alignment: only the adapter is optimised; the decoder
/// (including any attached LoRA) must stay bit-identical.
template <std::floating_point T>
StageResult train_stage1(BasicAdapter<T>& adapter, const BasicTransformer<T>& decoder, const std::vector<Stage1Example>& train,
                         const std::vector<Stage1Example>& val, const TrainPlan& plan, TrainLog& log, const std::string& stage = "stage1") {
  detail::require_frozen_backbone(decoder, "stage1");
  if (decoder.has_lora() && decoder.lora().params.parameter_count(true) != 0) throw StateError("stage1: LoRA factors must be frozen");
  for (const auto& ex : train) detail::check_adapter_inputs(adapter, ex.activation);
  const auto before = decoder.params().digest();
  const auto lora_before = decoder.has_lora() ? decoder.lora().params.digest() : std::string();
  const detail::LossFn<T, Stage1Example> loss = [&](const Stage1Example& ex, Mode m, RngState& r) {
    return stage1_loss(adapter, decoder, ex, m, r);
  };
  const auto guard = [&] {
    decoder.params().assert_no_frozen_grads("stage1 decoder");
    if (decoder.has_lora()) decoder.lora().params.assert_no_frozen_grads("stage1 LoRA");
  };
  auto result = detail::run_stage<T, Stage1Example>(stage, train, val, plan.stage1, plan, {{"adapter", &adapter.params()}}, loss, guard, log);
  if (decoder.params().digest() != before) throw FreezeViolation("stage1: decoder parameters changed during training");
  if (decoder.has_lora() && decoder.lora().params.digest() != lora_before) throw FreezeViolation("stage1: LoRA factors changed during training");
  return result;
}

/// Explanation tuning: adapter and LoRA factors train jointly; the backbone
/// stays bit-identical.
template <std::floating_point T>
StageResult train_stage2(BasicAdapter<T>& adapter, BasicTransformer<T>& decoder, const std::vector<Stage2Example>& train,
                         const std::vector<Stage2Example>& val, const TrainPlan& plan, TrainLog& log) {
  detail::require_frozen_backbone(decoder, "stage2");
  if (!decoder.has_lora()) throw StateError("stage2: decoder has no LoRA factors");
  for (const auto& ex : train) detail::check_adapter_inputs(adapter, ex.activation);
  decoder.lora().params.set_all_trainable(true);
  const auto before = decoder.params().digest();
  const detail::LossFn<T, Stage2Example> loss = [&](const Stage2Example& ex, Mode m, RngState& r) {
    return stage2_loss(adapter, decoder, ex, m, r);
  };
  const auto guard = [&] { decoder.params().assert_no_frozen_grads("stage2 decoder"); };
  auto result = detail::run_stage<T, Stage2Example>("stage2", train, val, plan.stage2, plan,
                                                    {{"adapter", &adapter.params()}, {"lora", &decoder.lora().params}}, loss, guard, log);
  if (decoder.params().digest() != before) throw FreezeViolation("stage2: decoder backbone changed during training");
  return result;
}

struct TransferResult {
  std::optional<StageResult> warmup;
  StageResult transfer;
};

/// Trains a fresh adapter for a new donor against a decoder whose LoRA comes
/// from another run. Backbone and LoRA are frozen and verified by digest.
template <std::floating_point T>
TransferResult adapter_only_transfer(BasicAdapter<T>& adapter, BasicTransformer<T>& decoder, const std::vector<Stage1Example>& warmup_train,
                                     const std::vector<Stage1Example>& warmup_val, const std::vector<Stage2Example>& train,
                                     const std::vector<Stage2Example>& val, const TrainPlan& plan, TrainLog& log) {
  if (plan.strategy != Strategy::adapter_only_transfer) throw ConfigError("transfer: plan strategy must be adapter-only transfer");
  plan.validate();
  detail::require_frozen_backbone(decoder, "transfer");
  if (!decoder.has_lora()) throw StateError("transfer: decoder has no source LoRA");
  if (decoder.lora().params.digest() != plan.source_lora_digest)
    throw ProvenanceError("transfer: LoRA digest does not match the source reference");
  for (const auto& ex : train) detail::check_adapter_inputs(adapter, ex.activation);
  decoder.lora().params.set_all_trainable(false);
  const auto backbone = decoder.params().digest();

  TransferResult result;
  if (plan.aot_warmup && plan.stage1.steps > 0 && !warmup_train.empty())
    result.warmup = train_stage1(adapter, decoder, warmup_train, warmup_val, plan, log, "aot-warmup");

  const detail::LossFn<T, Stage2Example> loss = [&](const Stage2Example& ex, Mode m, RngState& r) {
    return stage2_loss(adapter, decoder, ex, m, r);
  };
  const auto guard = [&] {
    decoder.params().assert_no_frozen_grads("transfer decoder");
    decoder.lora().params.assert_no_frozen_grads("transfer LoRA");
  };
  result.transfer = detail::run_stage<T, Stage2Example>("aot", train, val, plan.stage2, plan, {{"adapter", &adapter.params()}}, loss, guard, log);
  if (decoder.lora().params.digest() != plan.source_lora_digest) throw FreezeViolation("transfer: LoRA factors changed during training");
  if (decoder.params().digest() != backbone) throw FreezeViolation("transfer: decoder backbone changed during training");
  return result;
}

/// Training data for one donor layer.
struct LayerData {
  std::vector<Stage1Example> stage1_train, stage1_val;
  std::vector<Stage2Example> stage2_train, stage2_val;
};

template <std::floating_point T>
struct LayerResult {
  BasicAdapter<T> adapter;
  BasicParamStore<T> lora;  // empty when no Stage-2 steps were run
  StageResult stage1;
  std::optional<StageResult> stage2;
  [[nodiscard]] std::optional<double> final_val_loss() const { return stage2 ? stage2->final_val_loss : stage1.final_val_loss; }
};

/// One independent adapter per donor layer, each trained with the full
/// two-stage recipe starting from the same frozen decoder.
template <std::floating_point T>
std::map<int, LayerResult<T>> train_layerwise(const TrainPlan& plan, const std::vector<int>& layers, int donor_layers,
                                              const AdapterConfig& adapter_config, const BasicTransformer<T>& decoder, const LoraSpec& lora,
                                              const std::function<LayerData(int)>& data, TrainLog& log) {
  std::set<int> seen;
  for (const int l : layers) {
    if (!seen.insert(l).second) throw ConfigError("layerwise: layer " + std::to_string(l) + " listed twice");
    if (l < 0 || l >= donor_layers) throw IndexError("layerwise: layer " + std::to_string(l) + " outside donor range");
  }
  std::map<int, LayerResult<T>> out;
  for (const int l : layers) {
    TrainPlan layer_plan = plan;
    layer_plan.donor_layer = l;
    layer_plan.seed = RngState(plan.seed).fork(static_cast<std::uint64_t>(l)).seed();
    const auto d = data(l);
    TrainLog layer_log;
    auto adapter = BasicAdapter<T>::init(adapter_config, RngState(layer_plan.seed).fork(11));
    const auto s1 = train_stage1(adapter, decoder, d.stage1_train, d.stage1_val, layer_plan, layer_log);
    std::optional<StageResult> s2;
    BasicParamStore<T> factors;
    if (plan.stage2.steps > 0 && !d.stage2_train.empty()) {
      auto tuned = apply_lora(decoder, lora, RngState(layer_plan.seed).fork(12));
      s2 = train_stage2(adapter, tuned, d.stage2_train, d.stage2_val, layer_plan, layer_log);
      factors = tuned.lora().params;
    }
    for (auto r : layer_log.records()) {
      r.stage = "layer" + std::to_string(l) + "/" + r.stage;
      log.add(std::move(r));
    }
    out.emplace(l, LayerResult<T>{std::move(adapter), std::move(factors), s1, s2});
  }
  return out;
}

}  // namespace uav
