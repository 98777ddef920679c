#pragma once

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <string>

#include <nlohmann/json.hpp>

#include "uav/adapters/adapter.hpp"
#include "uav/core/digest.hpp"
#include "uav/data/corpus.hpp"
#include "uav/train/trainer.hpp"

namespace uav {

using Json = nlohmann::ordered_json;

/// Frozen donor: architecture plus the seed it is drawn from.
struct DonorSpec {
  TransformerConfig model{256, 64, 4, 4, 96, 0.0};
  std::uint64_t seed = 12;
  std::string id = "donor-a";
  InitScheme init = InitScheme::fan_in;
};

struct DataSpec {
  int records = 2000;
  int qa_max = 4000;
  std::uint64_t seed = 7;
  int stage1_extra_positions = 1;
  std::optional<WordBanks> word_banks;  // replaces the built-in banks when set
};

struct EvalSpec {
  int max_new_tokens = 32;
  int max_examples = 0;  // 0 = whole eval split
  double rouge_beta = 1.0;
  int embedding_dim = 512;
};

/// Everything a run needs; serialises to the documented JSON schema.
struct RunConfig {
  std::uint64_t seed = 1;
  DataSpec data;
  DonorSpec donor;
  TransformerConfig decoder;
  std::uint64_t decoder_seed = 11;
  AdapterConfig adapter = QFormerConfig{};
  LoraSpec lora;
  TrainPlan plan;
  EvalSpec eval;

  void validate() const {
    donor.model.validate();
    decoder.validate();
    std::visit([](const auto& c) { c.validate(); }, adapter);
    plan.validate();
    if (adapter_d_donor(adapter) != donor.model.d_model)
      throw ConfigError("config: adapter d_donor " + std::to_string(adapter_d_donor(adapter)) + " does not match donor d_model " +
                        std::to_string(donor.model.d_model));
    if (adapter_d_decoder(adapter) != decoder.d_model)
      throw ConfigError("config: adapter d_decoder " + std::to_string(adapter_d_decoder(adapter)) + " does not match decoder d_model " +
                        std::to_string(decoder.d_model));
    if (plan.donor_layer >= donor.model.n_layers) throw ConfigError("config: plan.donor_layer outside the donor's layers");
    if (data.records < 1) throw ConfigError("config: data.records must be >= 1");
    if (data.qa_max < 1) throw ConfigError("config: data.qa_max must be >= 1");
    if (data.stage1_extra_positions < 0) throw ConfigError("config: data.stage1_extra_positions must be >= 0");
    if (eval.max_new_tokens < 1) throw ConfigError("config: eval.max_new_tokens must be >= 1");
    if (eval.max_examples < 0) throw ConfigError("config: eval.max_examples must be >= 0");
    if (!(eval.rouge_beta > 0.0)) throw ConfigError("config: eval.rouge_beta must be positive");
    if (eval.embedding_dim < 1) throw ConfigError("config: eval.embedding_dim must be >= 1");
  }
};

/// Defaults used by the CLI: the plan's stage budgets are the tuned desk-scale
/// values rather than the bare TrainPlan defaults.
inline RunConfig default_run_config() {
  RunConfig c;
  c.plan.pretrain = {2000, 2e-3};
  return c;
}

namespace detail {

class JsonReader {
 public:
  JsonReader(const Json& j, std::string where) : j_(j), where_(std::move(where)) {
    if (!j_.is_object()) throw ConfigError("config: '" + where_ + "' must be an object");
  }

  template <typename V>
  void get(const char* key, V& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    try {
      out = j_.at(key).get<V>();
    } catch (const nlohmann::json::exception&) {
      throw ConfigError("config: '" + path(key) + "' has the wrong type");
    }
  }

  [[nodiscard]] std::optional<JsonReader> child(const char* key) {
    seen_.insert(key);
    if (!j_.contains(key)) return std::nullopt;
    return JsonReader(j_.at(key), path(key));
  }

  [[nodiscard]] bool has(const char* key) const { return j_.contains(key); }
  [[nodiscard]] const Json& raw(const char* key) {
    seen_.insert(key);
    return j_.at(key);
  }

  void finish() const {
    for (const auto& [k, v] : j_.items())
      if (!seen_.contains(k)) throw ConfigError("config: unknown key '" + path(k.c_str()) + "'");
  }

  [[nodiscard]] std::string path(const char* key) const { return where_.empty() ? key : where_ + "." + key; }

 private:
  const Json& j_;
  std::string where_;
  std::set<std::string> seen_;
};

inline Json transformer_json(const TransformerConfig& c) {
  return Json{{"vocab_size", c.vocab_size}, {"d_model", c.d_model}, {"n_layers", c.n_layers},
              {"n_heads", c.n_heads},       {"max_seq", c.max_seq}, {"dropout_p", c.dropout_p}};
}

inline void read_transformer(JsonReader& r, TransformerConfig& c) {
  r.get("vocab_size", c.vocab_size);
  r.get("d_model", c.d_model);
  r.get("n_layers", c.n_layers);
  r.get("n_heads", c.n_heads);
  r.get("max_seq", c.max_seq);
  r.get("dropout_p", c.dropout_p);
}

inline Json budget_json(const StageBudget& b) { return Json{{"steps", b.steps}, {"lr", b.lr}}; }

inline void read_budget(std::optional<JsonReader> r, StageBudget& b) {
  if (!r) return;
  r->get("steps", b.steps);
  r->get("lr", b.lr);
  r->finish();
}

inline std::string init_name(InitScheme s) { return s == InitScheme::small ? "small" : "fan_in"; }

inline InitScheme parse_init(const std::string& s) {
  if (s == "small") return InitScheme::small;
  if (s == "fan_in") return InitScheme::fan_in;
  throw ConfigError("config: unknown init scheme '" + s + "' (expected small|fan_in)");
}

inline Strategy parse_strategy(const std::string& s) {
  if (s == "full") return Strategy::full;
  if (s == "aot" || s == "adapter_only_transfer") return Strategy::adapter_only_transfer;
  throw ConfigError("config: unknown strategy '" + s + "' (expected full|aot)");
}

}  // namespace detail

inline Json to_json(const RunConfig& c) {
  Json adapter;
  if (const auto* m = std::get_if<MlpAdapterConfig>(&c.adapter)) {
    adapter = Json{{"family", "mlp"}, {"d_donor", m->d_donor}, {"d_decoder", m->d_decoder}, {"n_soft", m->n_soft}};
    adapter["bottleneck"] = m->bottleneck ? Json(*m->bottleneck) : Json(nullptr);
    adapter["dropout_p"] = m->dropout_p;
  } else {
    const auto& q = std::get<QFormerConfig>(c.adapter);
    adapter = Json{{"family", "qformer"}, {"d_donor", q.d_donor},   {"d_decoder", q.d_decoder}, {"n_soft", q.n_soft},
                   {"context_slots", q.context_slots}, {"layers", q.layers}, {"heads", q.heads}, {"ffn_mult", q.ffn_mult},
                   {"dropout_p", q.dropout_p}};
  }
  const auto& p = c.plan;
  Json plan{{"strategy", p.strategy == Strategy::full ? "full" : "aot"},
            {"donor_layer", p.donor_layer},
            {"pretrain", detail::budget_json(p.pretrain)},
            {"stage1", detail::budget_json(p.stage1)},
            {"stage2", detail::budget_json(p.stage2)},
            {"batch_size", p.batch_size},
            {"grad_accum", p.grad_accum},
            {"warmup_frac", p.warmup_frac},
            {"optim",
             {{"beta1", p.optim.beta1}, {"beta2", p.optim.beta2}, {"eps", p.optim.eps}, {"weight_decay", p.optim.weight_decay},
              {"clip_norm", p.optim.clip_norm}}},
            {"eval_every", p.eval_every},
            {"val_max_examples", p.val_max_examples},
            {"aot_warmup", p.aot_warmup}};
  Json data{{"records", c.data.records}, {"qa_max", c.data.qa_max}, {"seed", c.data.seed},
            {"stage1_extra_positions", c.data.stage1_extra_positions}};
  if (c.data.word_banks) data["word_banks"] = *c.data.word_banks;
  return Json{{"seed", c.seed},
              {"data", data},
              {"donor",
               {{"model", detail::transformer_json(c.donor.model)}, {"seed", c.donor.seed}, {"id", c.donor.id},
                {"init", detail::init_name(c.donor.init)}}},
              {"decoder", {{"model", detail::transformer_json(c.decoder)}, {"seed", c.decoder_seed}}},
              {"adapter", adapter},
              {"lora", {{"rank", c.lora.rank}, {"alpha", c.lora.alpha}, {"targets", c.lora.targets}}},
              {"plan", plan},
              {"eval",
               {{"max_new_tokens", c.eval.max_new_tokens}, {"max_examples", c.eval.max_examples}, {"rouge_beta", c.eval.rouge_beta},
                {"embedding_dim", c.eval.embedding_dim}}}};
}

/// Parses a config document over the defaults. Unknown keys are rejected.
inline RunConfig run_config_from_json(const Json& j, RunConfig c = default_run_config()) {
  using detail::JsonReader;
  JsonReader root(j, "");
  root.get("seed", c.seed);
  if (auto r = root.child("data")) {
    r->get("records", c.data.records);
    r->get("qa_max", c.data.qa_max);
    r->get("seed", c.data.seed);
    r->get("stage1_extra_positions", c.data.stage1_extra_positions);
    if (r->has("word_banks")) {
      WordBanks banks;
      r->get("word_banks", banks);
      c.data.word_banks = std::move(banks);
    }
    r->finish();
  }
  if (auto r = root.child("donor")) {
    if (auto m = r->child("model")) {
      detail::read_transformer(*m, c.donor.model);
      m->finish();
    }
    r->get("seed", c.donor.seed);
    r->get("id", c.donor.id);
    std::string init = detail::init_name(c.donor.init);
    r->get("init", init);
    c.donor.init = detail::parse_init(init);
    r->finish();
  }
  if (auto r = root.child("decoder")) {
    if (auto m = r->child("model")) {
      detail::read_transformer(*m, c.decoder);
      m->finish();
    }
    r->get("seed", c.decoder_seed);
    r->finish();
  }
  if (auto r = root.child("adapter")) {
    std::string family = adapter_family(c.adapter);
    r->get("family", family);
    if (family == "mlp") {
      MlpAdapterConfig m;
      if (const auto* prev = std::get_if<MlpAdapterConfig>(&c.adapter)) m = *prev;
      r->get("d_donor", m.d_donor);
      r->get("d_decoder", m.d_decoder);
      r->get("n_soft", m.n_soft);
      r->get("dropout_p", m.dropout_p);
      if (r->has("bottleneck")) {
        const auto& b = r->raw("bottleneck");
        if (b.is_null()) m.bottleneck.reset();
        else if (b.is_number_integer()) m.bottleneck = b.get<int>();
        else throw ConfigError("config: 'adapter.bottleneck' must be an integer or null");
      }
      c.adapter = m;
    } else if (family == "qformer") {
      QFormerConfig q;
      if (const auto* prev = std::get_if<QFormerConfig>(&c.adapter)) q = *prev;
      r->get("d_donor", q.d_donor);
      r->get("d_decoder", q.d_decoder);
      r->get("n_soft", q.n_soft);
      r->get("context_slots", q.context_slots);
      r->get("layers", q.layers);
      r->get("heads", q.heads);
      r->get("ffn_mult", q.ffn_mult);
      r->get("dropout_p", q.dropout_p);
      c.adapter = q;
    } else {
      throw ConfigError("config: unknown adapter family '" + family + "' (expected mlp|qformer)");
    }
    r->finish();
  }
  if (auto r = root.child("lora")) {
    r->get("rank", c.lora.rank);
    r->get("alpha", c.lora.alpha);
    r->get("targets", c.lora.targets);
    for (const auto& t : c.lora.targets)
      if (std::find(lora_target_names().begin(), lora_target_names().end(), t) == lora_target_names().end())
        throw ConfigError("config: unknown LoRA target '" + t + "'");
    r->finish();
  }
  if (auto r = root.child("plan")) {
    auto& p = c.plan;
    std::string strategy = p.strategy == Strategy::full ? "full" : "aot";
    r->get("strategy", strategy);
    p.strategy = detail::parse_strategy(strategy);
    r->get("donor_layer", p.donor_layer);
    detail::read_budget(r->child("pretrain"), p.pretrain);
    detail::read_budget(r->child("stage1"), p.stage1);
    detail::read_budget(r->child("stage2"), p.stage2);
    r->get("batch_size", p.batch_size);
    r->get("grad_accum", p.grad_accum);
    r->get("warmup_frac", p.warmup_frac);
    if (auto o = r->child("optim")) {
      o->get("beta1", p.optim.beta1);
      o->get("beta2", p.optim.beta2);
      o->get("eps", p.optim.eps);
      o->get("weight_decay", p.optim.weight_decay);
      o->get("clip_norm", p.optim.clip_norm);
      o->finish();
    }
    r->get("eval_every", p.eval_every);
    r->get("val_max_examples", p.val_max_examples);
    r->get("aot_warmup", p.aot_warmup);
    r->finish();
  }
  if (auto r = root.child("eval")) {
    r->get("max_new_tokens", c.eval.max_new_tokens);
    r->get("max_examples", c.eval.max_examples);
    r->get("rouge_beta", c.eval.rouge_beta);
    r->get("embedding_dim", c.eval.embedding_dim);
    r->finish();
  }
  root.finish();
  return c;
}

/// UAV_SEED, when set, replaces the run seed.
inline void apply_seed_override(RunConfig& c) {
  const char* env = std::getenv("UAV_SEED");
  if (!env) return;
  try {
    std::size_t used = 0;
    const auto v = std::stoull(env, &used);
    if (used != std::string(env).size()) throw std::invalid_argument("trailing");
    c.seed = v;
  } catch (const std::exception&) {
    throw ConfigError(std::string("UAV_SEED is not an unsigned integer: '") + env + "'");
  }
}

inline RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config: cannot open '" + path.string() + "'");
  Json j;
  try {
    j = Json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("config: '" + path.string() + "' is not valid JSON: " + e.what());
  }
  return run_config_from_json(j);
}

/// Resolved config: file (or defaults), then UAV_SEED, then validation. The
/// plan seed mirrors the run seed.
inline RunConfig resolve_run_config(const std::optional<std::filesystem::path>& path) {
  RunConfig c = path ? load_run_config(*path) : default_run_config();
  apply_seed_override(c);
  c.plan.seed = c.seed;
  c.validate();
  return c;
}

inline std::string config_digest(const RunConfig& c) {
  const auto text = to_json(c).dump();
  return sha256_hex(std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

}  // namespace uav
