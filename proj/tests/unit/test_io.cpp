#include <catch_amalgamated.hpp>

#include <bit>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <limits>

#include "uav/eval/evaluate.hpp"
#include "uav/io/checkpoint.hpp"
#include "uav/io/config.hpp"
#include "uav/io/records.hpp"

using namespace uav;
namespace fs = std::filesystem;

namespace {

using Kind = IntegrityError::Kind;

ParamStore random_store(std::uint64_t seed) {
  RngState rng(seed);
  ParamStore s;
  const std::size_t entries = 1 + rng.below(5);
  for (std::size_t i = 0; i < entries; ++i) {
    Shape shape(1 + rng.below(3));
    for (auto& d : shape) d = 1 + rng.below(4);
    s.add_normal("t" + std::to_string(i) + ".w", shape, 1.0, rng, true);
  }
  return s;
}

std::optional<Kind> load_kind(std::span<const std::uint8_t> bytes) {
  try {
    (void)deserialize_checkpoint(bytes);
  } catch (const IntegrityError& e) {
    return e.kind();
  }
  return std::nullopt;
}

fs::path scratch(const std::string& name) {
  const auto dir = fs::temp_directory_path() / "uav_test_io";
  fs::create_directories(dir);
  return dir / name;
}

struct EnvGuard {
  explicit EnvGuard(const char* value) {
    if (value) ::setenv("UAV_SEED", value, 1);
    else ::unsetenv("UAV_SEED");
  }
  ~EnvGuard() { ::unsetenv("UAV_SEED"); }
};

}  // namespace

TEST_CASE("checkpoint round trip is bit-exact", "[io][checkpoint]") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto s = random_store(seed);
    const auto bytes = serialize_checkpoint(s);
    const auto back = deserialize_checkpoint(bytes);
    CHECK(back.digest() == s.digest());
    CHECK(serialize_checkpoint(back) == bytes);
  }
  SECTION("special values survive") {
    ParamStore s;
    s.add("special", Tensor({5}, {-0.0f, std::numeric_limits<float>::denorm_min(), std::numeric_limits<float>::lowest(),
                                  std::numeric_limits<float>::max(), 1.0f / 3.0f}),
          false);
    const auto back = deserialize_checkpoint(serialize_checkpoint(s));
    for (std::size_t i = 0; i < 5; ++i)
      CHECK(std::bit_cast<std::uint32_t>(back.at("special").data()[i]) == std::bit_cast<std::uint32_t>(s.at("special").data()[i]));
  }
  SECTION("files on disk") {
    const auto path = scratch("round.uavk");
    const auto s = random_store(42);
    save_checkpoint(path, s);
    CHECK(load_checkpoint(path).digest() == s.digest());
    CHECK_THROWS_AS(load_checkpoint(scratch("missing.uavk")), IntegrityError);
  }
  SECTION("loaded entries are frozen") {
    const auto back = deserialize_checkpoint(serialize_checkpoint(random_store(1)));
    CHECK(back.parameter_count(true) == 0);
  }
}

TEST_CASE("empty store is a valid checkpoint", "[io][checkpoint]") {
  const auto bytes = serialize_checkpoint(ParamStore{});
  // magic 4 + version 2 + count 4 + crc 4.
  CHECK(bytes.size() == 14);
  CHECK(deserialize_checkpoint(bytes).empty());
}

TEST_CASE("checkpoint header layout", "[io][checkpoint]") {
  ParamStore s;
  s.add("ab", Tensor({2}, {1.0f, -2.0f}), false);
  const auto b = serialize_checkpoint(s);
  const std::vector<std::uint8_t> head{'U', 'A', 'V', 'K', 1, 0, 1, 0, 0, 0, 2, 0, 0, 0, 'a', 'b', 1, 0, 0, 0, 2, 0, 0, 0};
  REQUIRE(b.size() == head.size() + 8 + 4);
  CHECK(std::equal(head.begin(), head.end(), b.begin()));
  // 1.0f = 0x3F800000 little-endian.
  CHECK(b[24] == 0x00);
  CHECK(b[27] == 0x3F);
  const std::uint32_t crc = b[32] | (b[33] << 8) | (b[34] << 16) | (static_cast<std::uint32_t>(b[35]) << 24);
  CHECK(crc == crc32_of(std::span(b).first(32)));
}

TEST_CASE("single-bit flips are rejected", "[io][checkpoint]") {
  const auto good = serialize_checkpoint(random_store(7));
  // Offset of the first float: header 10 + name len 4 + "t0.w" 4 + rank 4 + dims.
  const auto clean = deserialize_checkpoint(good);
  const std::size_t rank = clean.at("t0.w").rank();
  const std::size_t payload_start = 10 + 4 + 4 + 4 + 4 * rank;
  const std::size_t payload_end = payload_start + 4 * clean.at("t0.w").numel();
  std::size_t accepted = 0;
  for (std::size_t byte = 0; byte < good.size(); ++byte)
    for (int bit = 0; bit < 8; ++bit) {
      auto bad = good;
      bad[byte] ^= static_cast<std::uint8_t>(1u << bit);
      const auto kind = load_kind(bad);
      if (!kind) ++accepted;
      if (byte < 4) CHECK(kind == Kind::bad_magic);
      else if ((byte >= payload_start && byte < payload_end) || byte >= good.size() - 4) CHECK(kind == Kind::checksum);
    }
  CHECK(accepted == 0);
}

TEST_CASE("unknown version, truncation and bad magic are distinct", "[io][checkpoint]") {
  const auto good = serialize_checkpoint(random_store(3));
  SECTION("version") {
    auto v2 = good;
    v2[4] = 2;
    const auto crc = crc32_of(std::span(v2).first(v2.size() - 4));
    for (int i = 0; i < 4; ++i) v2[v2.size() - 4 + static_cast<std::size_t>(i)] = static_cast<std::uint8_t>(crc >> (8 * i));
    CHECK(load_kind(v2) == Kind::unknown_version);
  }
  SECTION("every truncation") {
    for (std::size_t len = 4; len < good.size(); ++len) {
      INFO("length " << len);
      CHECK(load_kind(std::span(good).first(len)) == Kind::truncated);
    }
    CHECK(load_kind(std::span(good).first(2)) == Kind::bad_magic);
  }
  SECTION("magic") {
    auto bad = good;
    bad[0] = 'X';
    CHECK(load_kind(bad) == Kind::bad_magic);
  }
}

TEST_CASE("config round trip and digest", "[io][config]") {
  EnvGuard env(nullptr);
  const auto c = default_run_config();
  const auto again = run_config_from_json(to_json(c));
  CHECK(to_json(again).dump() == to_json(c).dump());
  CHECK(config_digest(again) == config_digest(c));
  auto other = c;
  other.seed = 99;
  CHECK(config_digest(other) != config_digest(c));

  const auto path = scratch("config.json");
  {
    std::ofstream out(path);
    out << to_json(other).dump(2);
  }
  CHECK(config_digest(load_run_config(path)) == config_digest(other));
}

TEST_CASE("config rejects unknown keys and bad values", "[io][config]") {
  EnvGuard env(nullptr);
  auto j = to_json(default_run_config());
  SECTION("top level") {
    j["colour"] = "blue";
    CHECK_THROWS_AS(run_config_from_json(j), ConfigError);
  }
  SECTION("nested") {
    j["plan"]["stage1"]["momentum"] = 0.5;
    CHECK_THROWS_AS(run_config_from_json(j), ConfigError);
  }
  SECTION("wrong type") {
    j["seed"] = "seven";
    CHECK_THROWS_AS(run_config_from_json(j), ConfigError);
  }
  SECTION("invalid JSON file") {
    const auto path = scratch("broken.json");
    std::ofstream(path) << "{ not json";
    CHECK_THROWS_AS(load_run_config(path), ConfigError);
  }
  SECTION("width mismatch fails validation") {
    auto c = default_run_config();
    c.donor.model.d_model = 48;
    CHECK_THROWS_AS(c.validate(), ConfigError);
  }
}

TEST_CASE("UAV_SEED overrides the config seed", "[io][config]") {
  {
    EnvGuard env("1234");
    const auto c = resolve_run_config(std::nullopt);
    CHECK(c.seed == 1234);
    CHECK(c.plan.seed == 1234);
  }
  {
    EnvGuard env("12ab");
    CHECK_THROWS_AS(resolve_run_config(std::nullopt), ConfigError);
  }
  {
    EnvGuard env(nullptr);
    CHECK(resolve_run_config(std::nullopt).seed == default_run_config().seed);
  }
}

TEST_CASE("corpus and QA files round trip", "[io][records]") {
  SyntheticGrammar g;
  g.seed = 2;
  const auto records = generate_corpus(g, 40);
  const auto qa = synthesize_corpus_qa(records, 2, 1000);
  const auto cp = scratch("corpus.jsonl"), qp = scratch("qa.jsonl");
  detail::write_text(cp, corpus_jsonl(records));
  detail::write_text(qp, qa_jsonl(qa));
  const auto r2 = read_corpus(cp);
  const auto q2 = read_qa(qp);
  REQUIRE(r2.size() == records.size());
  REQUIRE(q2.size() == qa.size());
  for (std::size_t i = 0; i < r2.size(); ++i) CHECK((r2[i].id == records[i].id && r2[i].text == records[i].text && r2[i].subtype == records[i].subtype));
  for (std::size_t i = 0; i < q2.size(); ++i) CHECK((q2[i].answer == qa[i].answer && q2[i].mode == qa[i].mode));
  CHECK(corpus_jsonl(r2) == corpus_jsonl(records));
  CHECK(corpus_jsonl(records).rfind(R"({"id":0,"source":"bio-factual","text":)", 0) == 0);

  detail::write_text(cp, R"({"id":1,"source":"poetry","text":"A text that is long enough for the bound."})" "\n");
  CHECK_THROWS_AS(read_corpus(cp), ValidationError);
  detail::write_text(cp, R"({"id":1,"source":"topic"})" "\n");
  CHECK_THROWS_AS(read_corpus(cp), ValidationError);
  detail::write_text(cp, "not json\n");
  CHECK_THROWS_AS(read_corpus(cp), ValidationError);
}

TEST_CASE("report aggregates are recomputable from rows", "[io][report]") {
  RngState rng(8);
  std::vector<EvalRow> rows;
  const Category cats[] = {Category::fact, Category::gist, Category::classification};
  for (int i = 0; i < 25; ++i) {
    EvalRow r;
    r.id = std::to_string(i);
    r.category = cats[i % 3];
    r.scores = {rng.uniform(), rng.uniform(), rng.uniform(), rng.uniform()};
    rows.push_back(r);
  }
  const auto report = make_report("abc", rows);
  for (std::size_t k = 0; k < 4; ++k) {
    double sum = 0.0;
    for (const auto& r : rows) sum += metric_value(r.scores, k);
    CHECK(std::abs(report.metrics.aggregates.at(Category::overall)[k].mean - sum / 25.0) < 1e-12);
  }
  CHECK(report_jsonl(report) == report_jsonl(make_report("abc", rows)));
  CHECK(report_table(report).find("config abc") != std::string::npos);
  const auto text = report_jsonl(report);
  const auto lines = std::count(text.begin(), text.end(), '\n');
  CHECK(lines == 25 + 4 + 1);
  CHECK_THROWS_AS(make_report("abc", {}), AggregationError);
}

TEST_CASE("prediction files", "[io][records]") {
  const auto path = scratch("pred.jsonl");
  detail::write_text(path, R"({"id":"a","category":"fact","prediction":"Oslo","reference":"Oslo"})" "\n"
                           R"({"id":7,"category":"gist","prediction":"a x","reference":"a x"})" "\n");
  const auto rows = read_predictions(path);
  REQUIRE(rows.size() == 2);
  CHECK(rows[1].id == "7");
  for (const auto& r : rows) {
    CHECK(token_f1(r.prediction, r.reference) == 1.0);
    CHECK(rouge_l(r.prediction, r.reference) == 1.0);
    CHECK(chrf_pp(r.prediction, r.reference) == 1.0);
  }
  detail::write_text(path, R"({"id":"a","category":"overall","prediction":"x","reference":"x"})" "\n");
  CHECK_THROWS_AS(read_predictions(path), ValidationError);
}
