#pragma once

#include <filesystem>
#include <iomanip>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "uav/eval/evaluate.hpp"
#include "uav/io/checkpoint.hpp"
#include "uav/io/records.hpp"
#include "uav/pipeline.hpp"

namespace uav::cli {

enum ExitCode : int { kOk = 0, kUsage = 1, kValidation = 2, kIntegrity = 3 };

// Flag combination the command cannot act on.
class UsageError : public Error {
 public:
  using Error::Error;
};

namespace fs = std::filesystem;

inline const char* kCorpusFile = "corpus.jsonl";
inline const char* kQaFile = "qa.jsonl";
inline const char* kManifestFile = "manifest.json";
inline const char* kDecoderFile = "decoder.uavk";
inline const char* kAdapterFile = "adapter.uavk";
inline const char* kLoraFile = "lora.uavk";
inline const char* kLogFile = "train_log.jsonl";
inline const char* kRunConfigFile = "run_config.json";
inline const char* kSummaryFile = "summary.json";
inline const char* kReportJsonl = "report.jsonl";
inline const char* kReportTable = "report.txt";

/// Runs `body`, mapping library errors onto exit codes and printing the
/// message to `err`.
template <typename F>
int guarded(std::ostream& err, F&& body) {
  try {
    return body();
  } catch (const UsageError& e) {
    err << "usage error: " << e.what() << "\n";
    return kUsage;
  } catch (const IntegrityError& e) {
    err << "integrity error: " << e.what() << "\n";
    return kIntegrity;
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return kValidation;
  }
}

namespace detail {

inline void prepare_outputs(const fs::path& dir, const std::vector<std::string>& files, bool force) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IntegrityError(IntegrityError::Kind::io, "cannot create '" + dir.string() + "': " + ec.message());
  if (force) return;
  for (const auto& f : files)
    if (fs::exists(dir / f)) throw ValidationError("'" + (dir / f).string() + "' exists; pass --force to overwrite");
}

inline Corpus load_data_dir(const fs::path& dir) {
  if (!fs::exists(dir / kCorpusFile) || !fs::exists(dir / kQaFile))
    throw ValidationError("data directory '" + dir.string() + "' lacks " + kCorpusFile + " or " + kQaFile);
  return assemble_corpus(read_corpus(dir / kCorpusFile), read_qa(dir / kQaFile));
}

inline Transformer load_decoder(const RunConfig& c, const fs::path& path) {
  return Transformer(c.decoder, load_checkpoint(path), "decoder");
}

inline Adapter load_adapter(const RunConfig& c, const fs::path& path) { return Adapter(c.adapter, load_checkpoint(path)); }

inline Transformer with_lora(Transformer decoder, const LoraSpec& spec, const fs::path& path) {
  auto factors = load_checkpoint(path);
  decoder.attach_lora(spec, std::move(factors));
  return decoder;
}

inline nlohmann::ordered_json stage_json(const StageResult& r) {
  nlohmann::ordered_json j{{"steps", r.steps}, {"first_train_loss", r.first_train_loss}, {"final_train_loss", r.final_train_loss}};
  j["final_val_loss"] = r.final_val_loss ? nlohmann::ordered_json(*r.final_val_loss) : nlohmann::ordered_json(nullptr);
  return j;
}

}  // namespace detail

inline void write_config_file(const fs::path& path, const RunConfig& c) { uav::detail::write_text(path, to_json(c).dump(2) + "\n"); }

struct GenDataOptions {
  std::optional<fs::path> config;
  fs::path out;
  std::optional<std::uint64_t> seed;
  bool force = false;
};

/// Writes corpus.jsonl, qa.jsonl and manifest.json.
inline int cmd_gen_data(const GenDataOptions& o, std::ostream& out) {
  auto c = resolve_run_config(o.config);
  if (o.seed) c.data.seed = *o.seed;
  detail::prepare_outputs(o.out, {kCorpusFile, kQaFile, kManifestFile}, o.force);
  const auto corpus = generate_data(c.data);
  uav::detail::write_text(o.out / kCorpusFile, corpus_jsonl(corpus.records));
  uav::detail::write_text(o.out / kQaFile, qa_jsonl(corpus.qa));
  nlohmann::ordered_json m{{"data_seed", c.data.seed},
                           {"records", corpus.records.size()},
                           {"qa_items", corpus.qa.size()},
                           {"train_records", corpus.split.train.size()},
                           {"eval_records", corpus.split.eval.size()},
                           {"train_qa", corpus.qa_train.size()},
                           {"eval_qa", corpus.qa_eval.size()},
                           {"config_digest", config_digest(c)}};
  uav::detail::write_text(o.out / kManifestFile, m.dump(2) + "\n");
  out << "wrote " << corpus.records.size() << " records and " << corpus.qa.size() << " QA items to " << o.out.string() << "\n";
  return kOk;
}

struct TrainOptions {
  std::optional<fs::path> config;
  fs::path data;
  fs::path out;
  std::string strategy = "full";
  std::string stage = "all";  // 0 | 1 | 2 | all
  std::optional<int> layer;
  std::optional<fs::path> source_lora;
  std::optional<fs::path> decoder;
  std::optional<fs::path> adapter_init;
  std::optional<std::uint64_t> seed;
  bool force = false;
};

/// Full strategy: stage 0 pretrains the decoder, stage 1 aligns a fresh
/// adapter, stage 2 tunes adapter + LoRA. The aot strategy trains a fresh
/// adapter against a frozen source LoRA.
inline int cmd_train(const TrainOptions& o, std::ostream& out) {
  auto c = resolve_run_config(o.config);
  if (o.seed) c.seed = c.plan.seed = *o.seed;
  if (o.layer) c.plan.donor_layer = *o.layer;
  const bool aot = o.strategy == "aot";
  if (!aot && o.strategy != "full") throw UsageError("--strategy must be full or aot");
  c.plan.strategy = aot ? Strategy::adapter_only_transfer : Strategy::full;
  if (aot && !o.source_lora) throw UsageError("--strategy aot requires --source-lora");
  if (!aot && o.source_lora) throw UsageError("--source-lora is only meaningful with --strategy aot");
  if (o.stage != "0" && o.stage != "1" && o.stage != "2" && o.stage != "all") throw UsageError("--stage must be 0, 1, 2 or all");
  const bool all = o.stage == "all";
  const bool run0 = !aot && (o.stage == "0" || (all && !o.decoder));
  const bool run1 = !aot && (o.stage == "1" || all);
  const bool run2 = !aot && (o.stage == "2" || all);
  if (aot && !o.decoder) throw UsageError("--strategy aot requires --decoder");
  if (!run0 && !o.decoder) throw UsageError("--stage " + o.stage + " requires --decoder");
  if (run0 && o.decoder) throw UsageError("--stage 0 trains a decoder; do not pass --decoder");
  if (o.adapter_init && (aot || run1)) throw UsageError("--adapter-init only applies to --stage 2");
  std::optional<ParamStore> source_lora;
  if (aot) {
    source_lora = load_checkpoint(*o.source_lora);
    c.plan.source_lora_digest = source_lora->digest();
  }
  c.validate();

  std::vector<std::string> outputs{kLogFile, kRunConfigFile, kSummaryFile};
  if (run0) outputs.push_back(kDecoderFile);
  if (run1 || run2 || aot) outputs.push_back(kAdapterFile);
  if (run2) outputs.push_back(kLoraFile);
  detail::prepare_outputs(o.out, outputs, o.force);

  const auto corpus = detail::load_data_dir(o.data);
  const auto donor = make_donor(c.donor);
  const auto donor_digest = donor.params().digest();
  TrainLog log;
  nlohmann::ordered_json summary{{"config_digest", config_digest(c)}, {"strategy", o.strategy}, {"stage", o.stage}};

  Transformer decoder = o.decoder ? detail::load_decoder(c, *o.decoder) : make_decoder(c);
  if (run0) {
    const auto train = pretraining_windows(corpus.split.train, corpus.qa_train, c.decoder.max_seq, c.seed);
    const auto val = pretraining_windows(corpus.split.eval, corpus.qa_eval, c.decoder.max_seq, c.seed + 1);
    summary["stage0"] = detail::stage_json(pretrain_decoder(decoder, train, val, c.plan, log));
    save_checkpoint(o.out / kDecoderFile, decoder.params());
    summary["decoder_digest"] = decoder.params().digest();
  }

  if (run1 || run2 || aot) {
    const bool need_stage1 = run1 || (aot && c.plan.aot_warmup);
    DonorData data;
    if (need_stage1) {
      data.stage1_train = build_stage1_examples(donor, corpus.split.train, c.plan.donor_layer, c.data.stage1_extra_positions, c.seed);
      data.stage1_val = build_stage1_examples(donor, corpus.split.eval, c.plan.donor_layer, 0, c.seed);
    }
    if (run2 || aot) {
      data.stage2_train = build_stage2_examples(donor, corpus.split.train, corpus.qa_train, c.plan.donor_layer);
      data.stage2_val = build_stage2_examples(donor, corpus.split.eval, corpus.qa_eval, c.plan.donor_layer);
    }
    Adapter adapter = o.adapter_init ? detail::load_adapter(c, *o.adapter_init) : Adapter::init(c.adapter, RngState(c.seed).fork(0xada));
    adapter.params().set_all_trainable(true);
    if (aot) {
      decoder.attach_lora(c.lora, std::move(*source_lora));
      const auto r = adapter_only_transfer(adapter, decoder, data.stage1_train, data.stage1_val, data.stage2_train, data.stage2_val, c.plan, log);
      if (r.warmup) summary["aot_warmup"] = detail::stage_json(*r.warmup);
      summary["aot"] = detail::stage_json(r.transfer);
      summary["source_lora_digest"] = c.plan.source_lora_digest;
      summary["source_lora_digest_after"] = decoder.lora().params.digest();
    } else {
      if (run1) summary["stage1"] = detail::stage_json(train_stage1(adapter, decoder, data.stage1_train, data.stage1_val, c.plan, log));
      if (run2) {
        auto tuned = apply_lora(decoder, c.lora, RngState(c.seed).fork(0x10a));
        summary["stage2"] = detail::stage_json(train_stage2(adapter, tuned, data.stage2_train, data.stage2_val, c.plan, log));
        save_checkpoint(o.out / kLoraFile, tuned.lora().params);
        summary["lora_digest"] = tuned.lora().params.digest();
      }
    }
    save_checkpoint(o.out / kAdapterFile, adapter.params());
    summary["adapter_digest"] = adapter.params().digest();
  }
  if (donor.params().digest() != donor_digest) throw FreezeViolation("train: donor parameters changed");
  summary["donor_digest"] = donor_digest;

  uav::detail::write_text(o.out / kLogFile, log.to_jsonl());
  write_config_file(o.out / kRunConfigFile, c);
  uav::detail::write_text(o.out / kSummaryFile, summary.dump(2) + "\n");
  out << summary.dump(2) << "\n";
  return kOk;
}

struct EvalOptions {
  std::optional<fs::path> config;
  fs::path data;
  fs::path decoder;
  fs::path adapter;
  std::optional<fs::path> lora;
  fs::path out;
  std::optional<std::uint64_t> seed;
  bool force = false;
};

inline int cmd_eval(const EvalOptions& o, std::ostream& out) {
  auto c = resolve_run_config(o.config);
  if (o.seed) c.seed = c.plan.seed = *o.seed;
  detail::prepare_outputs(o.out, {kReportJsonl, kReportTable}, o.force);
  const auto corpus = detail::load_data_dir(o.data);
  const auto donor = make_donor(c.donor);
  auto decoder = detail::load_decoder(c, o.decoder);
  if (o.lora) decoder = detail::with_lora(std::move(decoder), c.lora, *o.lora);
  const auto adapter = detail::load_adapter(c, o.adapter);
  const auto examples = build_stage2_examples(donor, corpus.split.eval, corpus.qa_eval, c.plan.donor_layer);
  const HashedTrigramProvider provider(static_cast<std::size_t>(c.eval.embedding_dim));
  const auto report = evaluate(adapter, decoder, examples, provider,
                               {c.eval.max_new_tokens, static_cast<std::size_t>(c.eval.max_examples), c.eval.rouge_beta}, config_digest(c));
  uav::detail::write_text(o.out / kReportJsonl, report_jsonl(report));
  uav::detail::write_text(o.out / kReportTable, report_table(report));
  out << report_table(report);
  return kOk;
}

struct ScoreOptions {
  fs::path predictions;
  fs::path out;
  std::optional<fs::path> config;
  bool force = false;
};

/// Metrics only, over a file of {id, category, prediction, reference} rows.
inline int cmd_score(const ScoreOptions& o, std::ostream& out) {
  const auto c = resolve_run_config(o.config);
  detail::prepare_outputs(o.out, {kReportJsonl, kReportTable}, o.force);
  const HashedTrigramProvider provider(static_cast<std::size_t>(c.eval.embedding_dim));
  std::vector<EvalRow> rows;
  for (const auto& p : read_predictions(o.predictions)) {
    EvalRow r;
    r.id = p.id;
    r.category = p.category;
    r.reference = p.reference;
    r.prediction = p.prediction;
    r.scores = {token_f1(p.prediction, p.reference), rouge_l(p.prediction, p.reference, c.eval.rouge_beta), chrf_pp(p.prediction, p.reference),
                embed_f(p.prediction, p.reference, provider)};
    rows.push_back(std::move(r));
  }
  const auto report = make_report(config_digest(c), std::move(rows));
  uav::detail::write_text(o.out / kReportJsonl, report_jsonl(report));
  uav::detail::write_text(o.out / kReportTable, report_table(report));
  out << report_table(report);
  return kOk;
}

inline int cmd_inspect_ckpt(const fs::path& path, std::ostream& out) {
  const auto store = load_checkpoint(path);
  out << "file     " << path.string() << "\n";
  out << "version  " << kCheckpointVersion << "\n";
  out << "entries  " << store.size() << "\n";
  out << "params   " << store.parameter_count() << "\n";
  out << "sha256   " << store.digest() << "\n";
  for (const auto& [name, e] : store) out << "  " << std::left << std::setw(40) << name << " " << shape_str(e.tensor.shape()) << "\n";
  return kOk;
}

}  // namespace uav::cli
