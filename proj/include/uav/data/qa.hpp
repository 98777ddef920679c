#pragma once

#include <algorithm>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "uav/data/corpus.hpp"
#include "uav/train/losses.hpp"

namespace uav {

struct QaItem {
  int record_id = 0;
  TaskTag mode = TaskTag::factual;
  std::string question;
  std::string answer;
};

inline const std::vector<std::string>& gist_question_pool() {
  static const std::vector<std::string> pool{
      "What is this text about?",
      "Summarize this text.",
      "Give a short summary of the input.",
      "What is the gist of this passage?",
      "Describe the content briefly.",
      "What does this text say?",
      "Provide a one-sentence summary.",
      "What is the main idea here?",
      "Briefly, what is described?",
      "Sum up the input in a few words.",
      "What is the overall meaning?",
      "Condense this text into a summary.",
  };
  return pool;
}

namespace detail {

inline const std::string& slot(const CorpusRecord& r, const std::string& name) {
  const auto it = r.slots.find(name);
  if (it == r.slots.end() || it->second.empty())
    throw SynthesisError("synthesize_qa: record " + std::to_string(r.id) + " has no '" + name + "' slot");
  return it->second;
}

inline std::string with_article(const std::string& noun) {
  const bool vowel = std::string("aeiou").find(noun[0]) != std::string::npos;
  return (vowel ? "An " : "A ") + noun;
}

}  // namespace detail

/// One-sentence paraphrase used as the gist answer.
inline std::string canonical_paraphrase(const CorpusRecord& r) {
  using detail::slot;
  if (r.source == "bio-factual") return detail::with_article(slot(r, "profession")) + " from " + slot(r, "city") + ".";
  if (r.source == "place-factual") return detail::with_article(slot(r, "kind")) + " in " + slot(r, "country") + ".";
  if (r.source == "sentiment") return detail::with_article(slot(r, "tone")) + " review of a " + slot(r, "product") + ".";
  if (r.source == "topic") return "News about " + slot(r, "topic") + " in " + slot(r, "region") + ".";
  throw SynthesisError("synthesize_qa: unknown source '" + r.source + "'");
}

/// Template questions for one record. Factual and comprehension questions
/// refer to the subject only through a placeholder; the gist question is
/// drawn uniformly from the pool.
inline std::vector<QaItem> synthesize_qa(const CorpusRecord& r, RngState& rng) {
  using detail::slot;
  std::vector<QaItem> out;
  const auto add = [&](TaskTag mode, std::string q, std::string a) { out.push_back({r.id, mode, std::move(q), std::move(a)}); };
  if (r.source == "bio-factual") {
    add(TaskTag::factual, "What was this person's profession?", slot(r, "profession"));
    add(TaskTag::factual, "Where was this person born?", slot(r, "city"));
    add(TaskTag::factual, "In what year was this person born?", slot(r, "year"));
    add(TaskTag::factual, "What is the name of this person?", slot(r, "name"));
  } else if (r.source == "place-factual") {
    add(TaskTag::factual, "What kind of place is this?", slot(r, "kind"));
    add(TaskTag::factual, "In which country is this place?", slot(r, "country"));
    add(TaskTag::factual, "What is this place known for?", slot(r, "feature"));
    add(TaskTag::factual, "What is the name of this place?", slot(r, "city"));
  } else if (r.source == "sentiment") {
    add(TaskTag::comprehension, "What is the tone of this review?", slot(r, "tone"));
    add(TaskTag::comprehension, "What product is being reviewed?", slot(r, "product"));
  } else if (r.source == "topic") {
    add(TaskTag::comprehension, "What topic does this news cover?", slot(r, "topic"));
    add(TaskTag::comprehension, "Which region is this news about?", slot(r, "region"));
  } else {
    throw SynthesisError("synthesize_qa: unknown source '" + r.source + "'");
  }
  const auto& pool = gist_question_pool();
  add(TaskTag::gist, pool[rng.below(pool.size())], canonical_paraphrase(r));
  return out;
}

/// QA items for a whole corpus, capped at `max_items` by a seeded subsample
/// that keeps the original (record, question) order.
inline std::vector<QaItem> synthesize_corpus_qa(const std::vector<CorpusRecord>& records, std::uint64_t seed, std::size_t max_items) {
  std::vector<QaItem> all;
  for (const auto& r : records) {
    RngState rng = RngState(seed).fork(0x9a00000000ULL + static_cast<std::uint64_t>(r.id));
    auto items = synthesize_qa(r, rng);
    all.insert(all.end(), items.begin(), items.end());
  }
  if (all.size() <= max_items) return all;
  std::vector<std::size_t> idx(all.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  RngState rng = RngState(seed).fork(0x5ab5a3b1e);
  shuffle(idx, rng);
  idx.resize(max_items);
  std::sort(idx.begin(), idx.end());
  std::vector<QaItem> out;
  out.reserve(max_items);
  for (const auto i : idx) out.push_back(all[i]);
  return out;
}

/// Held-out count for a group of n records: min(250, floor(20% of n)).
inline std::size_t holdout_count(std::size_t n) { return std::min<std::size_t>(250, n / 5); }

struct Split {
  std::vector<CorpusRecord> train;
  std::vector<CorpusRecord> eval;
};

/// Per source tag, the last min(250, 20%) records (in id order) are held out.
inline Split split_train_eval(const std::vector<CorpusRecord>& records) {
  if (records.size() < 5) throw SplitError("split: at least 5 records are required, got " + std::to_string(records.size()));
  std::map<std::string, std::vector<const CorpusRecord*>> groups;
  for (const auto& r : records) groups[r.source].push_back(&r);
  std::set<int> held;
  for (auto& [source, group] : groups) {
    std::sort(group.begin(), group.end(), [](const auto* a, const auto* b) { return a->id < b->id; });
    const auto k = holdout_count(group.size());
    for (std::size_t i = group.size() - k; i < group.size(); ++i) held.insert(group[i]->id);
  }
  Split s;
  for (const auto& r : records) (held.contains(r.id) ? s.eval : s.train).push_back(r);
  return s;
}

}  // namespace uav
