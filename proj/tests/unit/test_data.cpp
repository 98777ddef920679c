#include <catch_amalgamated.hpp>

#include <algorithm>
#include <set>
#include <sstream>

#include "uav/data/examples.hpp"
#include "uav/data/qa.hpp"

using namespace uav;

namespace {

std::vector<CorpusRecord> corpus(std::uint64_t seed, int n) {
  SyntheticGrammar g;
  g.seed = seed;
  return generate_corpus(g, n);
}

std::vector<std::string> words(const std::string& s) {
  std::istringstream in(s);
  std::vector<std::string> out;
  for (std::string w; in >> w;) {
    std::string clean;
    for (const char c : w)
      if (std::isalnum(static_cast<unsigned char>(c)) || c == '\'') clean += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    if (!clean.empty()) out.push_back(clean);
  }
  return out;
}

// True when some run of `k` consecutive words of `a` also occurs in `b`.
bool shares_run(const std::string& a, const std::string& b, std::size_t k) {
  const auto wa = words(a), wb = words(b);
  for (std::size_t i = 0; i + k <= wa.size(); ++i)
    for (std::size_t j = 0; j + k <= wb.size(); ++j)
      if (std::equal(wa.begin() + static_cast<std::ptrdiff_t>(i), wa.begin() + static_cast<std::ptrdiff_t>(i + k),
                     wb.begin() + static_cast<std::ptrdiff_t>(j)))
        return true;
  return false;
}

std::vector<CorpusRecord> one_source(int n) {
  std::vector<CorpusRecord> out;
  for (int i = 0; i < n; ++i) out.push_back({i, "topic", Subtype::comprehension, "filler text", {}});
  return out;
}

}  // namespace

TEST_CASE("corpus generation is deterministic", "[data]") {
  const auto a = corpus(3, 1), b = corpus(3, 1);
  REQUIRE(a.size() == 1);
  CHECK(a[0].text == b[0].text);
  CHECK(a[0].slots == b[0].slots);
  const auto x = corpus(3, 50), y = corpus(3, 50);
  for (std::size_t i = 0; i < x.size(); ++i) CHECK(x[i].text == y[i].text);
  CHECK_THROWS_AS(corpus(3, 0), ConfigError);
}

TEST_CASE("every record satisfies the length bounds", "[data]") {
  const auto records = corpus(11, 1000);
  REQUIRE(records.size() == 1000);
  std::set<std::string> sources;
  for (const auto& r : records) {
    CHECK(r.text.size() >= kMinRecordChars);
    CHECK(encode(r.text).size() <= kMaxRecordTokens);
    sources.insert(r.source);
  }
  CHECK(sources.size() == 4);
}

TEST_CASE("different seeds give mostly different texts", "[data]") {
  const auto a = corpus(1, 1000), b = corpus(2, 1000);
  std::set<std::string> in_b;
  for (const auto& r : b) in_b.insert(r.text);
  std::size_t shared = 0;
  for (const auto& r : a) shared += in_b.contains(r.text);
  CHECK(static_cast<double>(shared) / 1000.0 < 0.10);
}

TEST_CASE("an empty word bank is a configuration error", "[data]") {
  SyntheticGrammar g;
  g.banks["professions"].clear();
  CHECK_THROWS_AS(generate_corpus(g, 3), ConfigError);
  SyntheticGrammar extra;
  extra.banks["colours"] = {"red"};
  CHECK_THROWS_AS(generate_corpus(extra, 3), ConfigError);
}

TEST_CASE("length normalisation", "[data]") {
  SECTION("short valid text is unchanged") {
    const std::string t = "The lamp was lovely and bright.";  // 31 bytes
    REQUIRE(t.size() == 31);
    CHECK(normalize_length(t) == t);
  }
  SECTION("over-budget text keeps its first sentence") {
    const std::string first = "Dr. Anna Berg is a chemist born in Oslo in 1921.";
    const std::string t = first + " She later moved to Lima and opened a small laboratory there.";
    REQUIRE(t.size() > kMaxRecordTokens);
    CHECK(normalize_length(t) == first);
  }
  SECTION("over-budget single sentence is cut to a word-aligned prefix") {
    const std::string t = "Helix Corp announced new transit plans for the north this spring and more plans later";
    const auto out = normalize_length(t);
    REQUIRE(out.has_value());
    CHECK(out->size() <= kMaxRecordTokens);
    CHECK(t.rfind(*out, 0) == 0);
    CHECK(t[out->size()] == ' ');
  }
  SECTION("rejections") {
    CHECK_FALSE(normalize_length("Only twenty chars ok").has_value());
    CHECK_FALSE(normalize_length("This text has a control\tbyte in the middle of it.").has_value());
  }
}

TEST_CASE("QA synthesis", "[data][qa]") {
  CorpusRecord bio{0, "bio-factual", Subtype::factual, "Anna Berg is an engineer born in Oslo in 1921.",
                   {{"name", "Anna Berg"}, {"profession", "engineer"}, {"city", "Oslo"}, {"year", "1921"}}};
  RngState rng(1);
  const auto items = synthesize_qa(bio, rng);
  const auto it = std::find_if(items.begin(), items.end(), [](const QaItem& q) { return q.question == "What was this person's profession?"; });
  REQUIRE(it != items.end());
  CHECK(it->answer == "engineer");
  CHECK(it->mode == TaskTag::factual);
  CHECK(items.back().mode == TaskTag::gist);
  CHECK(items.back().answer == "An engineer from Oslo.");
  const auto& pool = gist_question_pool();
  CHECK(pool.size() == 12);
  CHECK(std::find(pool.begin(), pool.end(), items.back().question) != pool.end());

  auto missing = bio;
  missing.slots.erase("city");
  CHECK_THROWS_AS(synthesize_qa(missing, rng), SynthesisError);
}

TEST_CASE("generated QA obeys placeholder, recoverability and anti-leak rules", "[data][qa]") {
  const auto records = corpus(5, 800);
  const auto qa = synthesize_corpus_qa(records, 5, 100000);
  std::map<int, const CorpusRecord*> by_id;
  for (const auto& r : records) by_id[r.id] = &r;
  std::set<std::string> gist_questions;
  for (const auto& q : qa) {
    const auto& r = *by_id.at(q.record_id);
    if (const auto name = r.slots.find("name"); name != r.slots.end()) CHECK(q.question.find(name->second) == std::string::npos);
    if (const auto city = r.slots.find("city"); city != r.slots.end()) CHECK(q.question.find(city->second) == std::string::npos);
    if (q.mode == TaskTag::gist) {
      gist_questions.insert(q.question);
      continue;
    }
    CHECK(q.question.find(q.answer) == std::string::npos);
    CHECK_FALSE(shares_run(r.text, q.question, 4));
    if (q.mode == TaskTag::factual) CHECK(r.text.find(q.answer) != std::string::npos);
  }
  CHECK(gist_questions.size() > 6);  // uniform draws over the pool
}

TEST_CASE("QA subsampling is seeded and capped", "[data][qa]") {
  const auto records = corpus(5, 200);
  const auto full = synthesize_corpus_qa(records, 5, 100000);
  const auto a = synthesize_corpus_qa(records, 5, 300), b = synthesize_corpus_qa(records, 5, 300);
  REQUIRE(full.size() > 300);
  CHECK(a.size() == 300);
  for (std::size_t i = 0; i < a.size(); ++i) CHECK((a[i].record_id == b[i].record_id && a[i].question == b[i].question));
  for (std::size_t i = 1; i < a.size(); ++i) CHECK(a[i - 1].record_id <= a[i].record_id);
}

TEST_CASE("train/eval split rule", "[data][split]") {
  CHECK(split_train_eval(one_source(100)).eval.size() == 20);
  CHECK(split_train_eval(one_source(2000)).eval.size() == 250);
  CHECK(split_train_eval(one_source(5)).eval.size() == 1);
  CHECK_THROWS_AS(split_train_eval(one_source(4)), SplitError);

  const auto records = corpus(7, 2000);
  const auto s = split_train_eval(records);
  // 500 records per source tag, 100 held out from each.
  CHECK(s.eval.size() == 400);
  CHECK(s.train.size() == 1600);
  std::set<int> train_ids;
  for (const auto& r : s.train) train_ids.insert(r.id);
  for (const auto& r : s.eval) CHECK_FALSE(train_ids.contains(r.id));
  const auto again = split_train_eval(records);
  for (std::size_t i = 0; i < s.eval.size(); ++i) CHECK(again.eval[i].id == s.eval[i].id);
  // Tail split: the held-out ids of one source are its highest ids.
  int max_train_topic = -1, min_eval_topic = 1 << 30;
  for (const auto& r : s.train)
    if (r.source == "topic") max_train_topic = std::max(max_train_topic, r.id);
  for (const auto& r : s.eval)
    if (r.source == "topic") min_eval_topic = std::min(min_eval_topic, r.id);
  CHECK(max_train_topic < min_eval_topic);
}

TEST_CASE("stream windows", "[data]") {
  const std::vector<std::vector<int>> docs{{1, 2, 3}, {4, 5}, {6, 7, 8, 9}};
  const auto w = stream_windows(docs, 4, 3);
  REQUIRE(w.size() == 2);
  std::multiset<int> seen;
  for (const auto& x : w) {
    CHECK(x.size() == 4);
    seen.insert(x.begin(), x.end());
  }
  CHECK(seen.size() == 8);
  CHECK(stream_windows(docs, 4, 3) == w);
  const auto whole = stream_windows({{1, 2}}, 10, 0);
  REQUIRE(whole.size() == 1);
  CHECK(whole[0] == std::vector<int>{1, 2});
}

TEST_CASE("tokenizer", "[data]") {
  CHECK(encode("ab") == std::vector<int>{'a', 'b'});
  CHECK(encode_answer("ab") == std::vector<int>{'a', 'b', kEosToken});
  CHECK(decode(encode("Hello, world.")) == "Hello, world.");
}
