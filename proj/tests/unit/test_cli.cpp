#include <catch_amalgamated.hpp>

#include <sys/wait.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "uav/cli/commands.hpp"

using namespace uav;
using namespace uav::cli;
namespace fs = std::filesystem;

namespace {

fs::path workdir() {
  static const fs::path dir = [] {
    auto d = fs::temp_directory_path() / "uav_test_cli";
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
  }();
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::size_t line_count(const fs::path& p) {
  const auto s = slurp(p);
  return static_cast<std::size_t>(std::count(s.begin(), s.end(), '\n'));
}

// Small enough that every command finishes in well under a second.
fs::path tiny_config(const std::string& name, std::uint64_t donor_seed = 12) {
  auto j = to_json(default_run_config());
  j["data"]["records"] = 40;
  j["data"]["qa_max"] = 80;
  j["donor"]["model"]["d_model"] = 16;
  j["donor"]["model"]["n_layers"] = 2;
  j["donor"]["model"]["n_heads"] = 2;
  j["donor"]["seed"] = donor_seed;
  j["decoder"]["model"]["d_model"] = 16;
  j["decoder"]["model"]["n_layers"] = 2;
  j["decoder"]["model"]["n_heads"] = 2;
  j["adapter"]["d_donor"] = 16;
  j["adapter"]["d_decoder"] = 16;
  j["adapter"]["n_soft"] = 2;
  j["plan"]["donor_layer"] = 1;
  j["plan"]["pretrain"]["steps"] = 4;
  j["plan"]["stage1"]["steps"] = 4;
  j["plan"]["stage2"]["steps"] = 4;
  j["plan"]["batch_size"] = 2;
  j["plan"]["val_max_examples"] = 4;
  j["eval"]["max_examples"] = 6;
  j["eval"]["max_new_tokens"] = 4;
  const auto path = workdir() / name;
  std::ofstream(path) << j.dump(2);
  return path;
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string(UAV_CLI_BIN) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

int quiet(auto&& fn) {
  std::ostringstream sink;
  return guarded(sink, [&] { return fn(sink); });
}

struct Trained {
  fs::path config, data, run;
};

// One tiny end-to-end run shared by the tests below.
const Trained& trained() {
  static const Trained t = [] {
    Trained r{tiny_config("tiny.json"), workdir() / "data", workdir() / "run"};
    REQUIRE(quiet([&](std::ostream& o) { return cmd_gen_data({r.config, r.data, {}, false}, o); }) == kOk);
    TrainOptions opt;
    opt.config = r.config;
    opt.data = r.data;
    opt.out = r.run;
    REQUIRE(quiet([&](std::ostream& o) { return cmd_train(opt, o); }) == kOk);
    return r;
  }();
  return t;
}

}  // namespace

TEST_CASE("gen-data is byte-identical across reruns and counts match", "[cli]") {
  const auto cfg = tiny_config("gen.json");
  const auto a = workdir() / "gen_a", b = workdir() / "gen_b";
  REQUIRE(quiet([&](std::ostream& o) { return cmd_gen_data({cfg, a, {}, true}, o); }) == kOk);
  REQUIRE(quiet([&](std::ostream& o) { return cmd_gen_data({cfg, b, {}, true}, o); }) == kOk);
  for (const char* f : {kCorpusFile, kQaFile, kManifestFile}) CHECK(slurp(a / f) == slurp(b / f));
  const auto manifest = nlohmann::json::parse(slurp(a / kManifestFile));
  CHECK(manifest["records"].get<std::size_t>() == line_count(a / kCorpusFile));
  CHECK(manifest["qa_items"].get<std::size_t>() == line_count(a / kQaFile));
  CHECK(manifest["train_qa"].get<std::size_t>() + manifest["eval_qa"].get<std::size_t>() == line_count(a / kQaFile));

  SECTION("no silent overwrite") {
    CHECK(quiet([&](std::ostream& o) { return cmd_gen_data({cfg, a, {}, false}, o); }) == kValidation);
    CHECK(quiet([&](std::ostream& o) { return cmd_gen_data({cfg, a, {}, true}, o); }) == kOk);
  }
  SECTION("seed flag changes the data") {
    const auto c = workdir() / "gen_c";
    REQUIRE(quiet([&](std::ostream& o) { return cmd_gen_data({cfg, c, 99, false}, o); }) == kOk);
    CHECK(slurp(c / kCorpusFile) != slurp(a / kCorpusFile));
  }
}

TEST_CASE("train writes checkpoints reproducibly", "[cli]") {
  const auto& t = trained();
  for (const char* f : {kDecoderFile, kAdapterFile, kLoraFile, kLogFile, kRunConfigFile, kSummaryFile}) CHECK(fs::exists(t.run / f));
  TrainOptions opt;
  opt.config = t.config;
  opt.data = t.data;
  opt.out = workdir() / "run_again";
  opt.force = true;
  REQUIRE(quiet([&](std::ostream& o) { return cmd_train(opt, o); }) == kOk);
  for (const char* f : {kDecoderFile, kAdapterFile, kLoraFile, kRunConfigFile}) CHECK(slurp(t.run / f) == slurp(opt.out / f));
  const auto s1 = nlohmann::json::parse(slurp(t.run / kSummaryFile)), s2 = nlohmann::json::parse(slurp(opt.out / kSummaryFile));
  CHECK(s1["adapter_digest"] == s2["adapter_digest"]);
  CHECK(s1["lora_digest"] == s2["lora_digest"]);
  CHECK(s1["adapter_digest"].get<std::string>() == load_checkpoint(t.run / kAdapterFile).digest());

  SECTION("stage 2 from a stage-1 adapter") {
    TrainOptions s2opt;
    s2opt.config = t.config;
    s2opt.data = t.data;
    s2opt.out = workdir() / "run_stage2";
    s2opt.stage = "2";
    s2opt.decoder = t.run / kDecoderFile;
    s2opt.adapter_init = t.run / kAdapterFile;
    CHECK(quiet([&](std::ostream& o) { return cmd_train(s2opt, o); }) == kOk);
    CHECK(fs::exists(s2opt.out / kLoraFile));
    CHECK_FALSE(fs::exists(s2opt.out / kDecoderFile));
  }
}

TEST_CASE("transfer trains only an adapter and keeps the source LoRA", "[cli]") {
  const auto& t = trained();
  TrainOptions opt;
  opt.config = tiny_config("tiny_b.json", 22);
  opt.data = t.data;
  opt.out = workdir() / "aot";
  opt.strategy = "aot";
  opt.decoder = t.run / kDecoderFile;
  opt.source_lora = t.run / kLoraFile;
  REQUIRE(quiet([&](std::ostream& o) { return cmd_train(opt, o); }) == kOk);
  CHECK(fs::exists(opt.out / kAdapterFile));
  CHECK_FALSE(fs::exists(opt.out / kLoraFile));
  const auto s = nlohmann::json::parse(slurp(opt.out / kSummaryFile));
  CHECK(s["source_lora_digest"] == s["source_lora_digest_after"]);
  CHECK(s["source_lora_digest"].get<std::string>() == load_checkpoint(t.run / kLoraFile).digest());
}

TEST_CASE("eval reports are reproducible and consistent", "[cli]") {
  const auto& t = trained();
  cli::EvalOptions opt;
  opt.config = t.config;
  opt.data = t.data;
  opt.decoder = t.run / kDecoderFile;
  opt.adapter = t.run / kAdapterFile;
  opt.lora = t.run / kLoraFile;
  opt.out = workdir() / "eval_a";
  opt.force = true;
  REQUIRE(quiet([&](std::ostream& o) { return cmd_eval(opt, o); }) == kOk);
  auto again = opt;
  again.out = workdir() / "eval_b";
  REQUIRE(quiet([&](std::ostream& o) { return cmd_eval(again, o); }) == kOk);
  CHECK(slurp(opt.out / kReportJsonl) == slurp(again.out / kReportJsonl));
  CHECK(slurp(opt.out / kReportTable) == slurp(again.out / kReportTable));

  std::ifstream in(opt.out / kReportJsonl);
  std::vector<double> f1;
  double overall = -1.0;
  for (std::string line; std::getline(in, line);) {
    const auto j = nlohmann::json::parse(line);
    if (j["kind"] == "example") f1.push_back(j["token_f1"].get<double>());
    if (j["kind"] == "aggregate" && j["category"] == "overall") overall = j["token_f1"]["mean"].get<double>();
  }
  REQUIRE(f1.size() == 6);
  double sum = 0.0;
  for (const double v : f1) sum += v;
  CHECK(std::abs(overall - sum / 6.0) < 1e-12);

  SECTION("corrupted adapter is an integrity failure") {
    auto bytes = slurp(t.run / kAdapterFile);
    bytes[bytes.size() / 2] ^= 0x10;
    const auto bad = workdir() / "bad_adapter.uavk";
    std::ofstream(bad, std::ios::binary) << bytes;
    auto broken = opt;
    broken.adapter = bad;
    broken.out = workdir() / "eval_bad";
    CHECK(quiet([&](std::ostream& o) { return cmd_eval(broken, o); }) == kIntegrity);
  }
}

TEST_CASE("score against itself gives perfect lexical metrics", "[cli]") {
  const auto pred = workdir() / "pred.jsonl";
  std::ofstream(pred) << R"({"id":"1","category":"fact","prediction":"Oslo","reference":"Oslo"})" "\n"
                      << R"({"id":"2","category":"gist","prediction":"A poet from Lima.","reference":"A poet from Lima."})" "\n";
  const auto out = workdir() / "score";
  REQUIRE(quiet([&](std::ostream& o) { return cmd_score({pred, out, {}, false}, o); }) == kOk);
  std::ifstream in(out / kReportJsonl);
  std::size_t checked = 0;
  for (std::string line; std::getline(in, line);) {
    const auto j = nlohmann::json::parse(line);
    if (j["kind"] != "aggregate") continue;
    for (const char* m : {"token_f1", "rouge_l", "chrf_pp"}) CHECK(j[m]["mean"].get<double>() == 1.0);
    ++checked;
  }
  CHECK(checked == 3);  // fact, gist, overall
  const auto empty = workdir() / "empty.jsonl";
  std::ofstream(empty) << "";
  CHECK(quiet([&](std::ostream& o) { return cmd_score({empty, workdir() / "score_empty", {}, false}, o); }) == kValidation);
}

TEST_CASE("binary exit codes", "[cli][exit]") {
  const auto& t = trained();
  const auto cfg = t.config.string();
  CHECK(run_cli("--help") == kOk);
  CHECK(run_cli("") == kUsage);
  CHECK(run_cli("frobnicate") == kUsage);
  CHECK(run_cli("gen-data") == kUsage);  // missing --out
  CHECK(run_cli("train --data " + t.data.string() + " --out " + (workdir() / "x").string() + " --strategy aot --decoder " +
                (t.run / kDecoderFile).string()) == kUsage);
  CHECK(run_cli("transfer --config " + cfg + " --data " + t.data.string() + " --out " + (workdir() / "x").string()) == kUsage);
  CHECK(run_cli("inspect-ckpt " + (t.run / kAdapterFile).string()) == kOk);
  CHECK(run_cli("inspect-ckpt " + (t.run / kSummaryFile).string()) == kIntegrity);
  CHECK(run_cli("inspect-ckpt " + (workdir() / "nope.uavk").string()) == kIntegrity);

  const auto bad_cfg = workdir() / "bad.json";
  std::ofstream(bad_cfg) << R"({"seed": 1, "colour": "blue"})";
  CHECK(run_cli("gen-data --config " + bad_cfg.string() + " --out " + (workdir() / "y").string()) == kValidation);
  CHECK(run_cli("gen-data --config " + cfg + " --out " + t.data.string()) == kValidation);  // exists, no --force
  CHECK(run_cli("gen-data --config " + cfg + " --out " + (workdir() / "z").string()) == kOk);
  CHECK(std::system(("UAV_SEED=abc " + std::string(UAV_CLI_BIN) + " gen-data --out " + (workdir() / "w").string() + " >/dev/null 2>&1").c_str()) !=
        0);
}
