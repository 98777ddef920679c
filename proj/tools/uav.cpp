#include <iostream>

#include <CLI11.hpp>

#include "uav/cli/commands.hpp"

namespace {

using namespace uav::cli;

template <typename T>
void opt_path(CLI::App* app, const char* flag, std::optional<T>& target, const char* help) {
  app->add_option_function<std::string>(flag, [&target](const std::string& v) { target = T(v); }, help);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"uav: activation verbalizer toolkit"};
  app.require_subcommand(1);

  GenDataOptions gen;
  std::string gen_out;
  auto* gen_cmd = app.add_subcommand("gen-data", "generate the synthetic corpus and QA files");
  opt_path(gen_cmd, "--config", gen.config, "run config (JSON)");
  gen_cmd->add_option("--out", gen_out, "output directory")->required();
  gen_cmd->add_option_function<std::uint64_t>("--seed", [&](std::uint64_t v) { gen.seed = v; }, "data seed override");
  gen_cmd->add_flag("--force", gen.force, "overwrite existing files");

  TrainOptions train;
  std::string train_data, train_out;
  const auto add_train_flags = [&](CLI::App* cmd, bool with_strategy) {
    opt_path(cmd, "--config", train.config, "run config (JSON)");
    cmd->add_option("--data", train_data, "directory written by gen-data")->required();
    cmd->add_option("--out", train_out, "output directory")->required();
    if (with_strategy) {
      cmd->add_option("--strategy", train.strategy, "full | aot")->check(CLI::IsMember({"full", "aot"}));
      cmd->add_option("--stage", train.stage, "0 | 1 | 2 | all")->check(CLI::IsMember({"0", "1", "2", "all"}));
      opt_path(cmd, "--adapter-init", train.adapter_init, "stage-1 adapter checkpoint to start stage 2 from");
    }
    cmd->add_option_function<int>("--layer", [&](int v) { train.layer = v; }, "donor layer");
    opt_path(cmd, "--source-lora", train.source_lora, "frozen LoRA checkpoint (aot)");
    opt_path(cmd, "--decoder", train.decoder, "pretrained decoder checkpoint");
    cmd->add_option_function<std::uint64_t>("--seed", [&](std::uint64_t v) { train.seed = v; }, "run seed override");
    cmd->add_flag("--force", train.force, "overwrite existing files");
  };
  auto* train_cmd = app.add_subcommand("train", "train the decoder, adapter and LoRA");
  add_train_flags(train_cmd, true);
  auto* transfer_cmd = app.add_subcommand("transfer", "adapter-only transfer (train --strategy aot)");
  add_train_flags(transfer_cmd, false);

  EvalOptions ev;
  std::string ev_data, ev_decoder, ev_adapter, ev_out;
  auto* eval_cmd = app.add_subcommand("eval", "verbalize the eval split and score it");
  opt_path(eval_cmd, "--config", ev.config, "run config (JSON)");
  eval_cmd->add_option("--data", ev_data, "directory written by gen-data")->required();
  eval_cmd->add_option("--decoder", ev_decoder, "decoder checkpoint")->required();
  eval_cmd->add_option("--adapter", ev_adapter, "adapter checkpoint")->required();
  opt_path(eval_cmd, "--lora", ev.lora, "LoRA checkpoint");
  eval_cmd->add_option("--out", ev_out, "output directory")->required();
  eval_cmd->add_option_function<std::uint64_t>("--seed", [&](std::uint64_t v) { ev.seed = v; }, "run seed override");
  eval_cmd->add_flag("--force", ev.force, "overwrite existing files");

  ScoreOptions sc;
  std::string sc_pred, sc_out;
  auto* score_cmd = app.add_subcommand("score", "score a predictions file");
  score_cmd->add_option("--predictions", sc_pred, "JSONL rows {id, category, prediction, reference}")->required();
  score_cmd->add_option("--out", sc_out, "output directory")->required();
  opt_path(score_cmd, "--config", sc.config, "run config (JSON)");
  score_cmd->add_flag("--force", sc.force, "overwrite existing files");

  std::string ckpt;
  auto* inspect_cmd = app.add_subcommand("inspect-ckpt", "print a checkpoint's tensor table");
  inspect_cmd->add_option("checkpoint", ckpt, "checkpoint file")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kUsage;
  }

  return guarded(std::cerr, [&]() -> int {
    if (*gen_cmd) {
      gen.out = gen_out;
      return cmd_gen_data(gen, std::cout);
    }
    if (*train_cmd || *transfer_cmd) {
      if (*transfer_cmd) train.strategy = "aot";
      train.data = train_data;
      train.out = train_out;
      return cmd_train(train, std::cout);
    }
    if (*eval_cmd) {
      ev.data = ev_data;
      ev.decoder = ev_decoder;
      ev.adapter = ev_adapter;
      ev.out = ev_out;
      return cmd_eval(ev, std::cout);
    }
    if (*score_cmd) {
      sc.predictions = sc_pred;
      sc.out = sc_out;
      return cmd_score(sc, std::cout);
    }
    return cmd_inspect_ckpt(ckpt, std::cout);
  });
}
