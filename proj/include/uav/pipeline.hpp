#pragma once

#include <map>
#include <set>
#include <string>
#include <vector>

#include "uav/data/examples.hpp"
#include "uav/io/config.hpp"

namespace uav {

/// Seeded, frozen donor.
inline Transformer make_donor(const DonorSpec& spec) {
  auto donor = Transformer::init(spec.model, RngState(spec.seed), spec.init, spec.id);
  donor.params().set_all_trainable(false);
  return donor;
}

inline Transformer make_decoder(const RunConfig& c) { return Transformer::init(c.decoder, RngState(c.decoder_seed), InitScheme::small, "decoder"); }

struct Corpus {
  std::vector<CorpusRecord> records;
  std::vector<QaItem> qa;
  Split split;
  std::vector<QaItem> qa_train;
  std::vector<QaItem> qa_eval;
};

/// Splits records and routes each QA item to its record's side.
inline Corpus assemble_corpus(std::vector<CorpusRecord> records, std::vector<QaItem> qa) {
  Corpus c;
  c.split = split_train_eval(records);
  std::set<int> train_ids, known;
  for (const auto& r : c.split.train) train_ids.insert(r.id);
  for (const auto& r : records) known.insert(r.id);
  for (const auto& q : qa) {
    if (!known.contains(q.record_id)) throw ValidationError("qa item refers to unknown record " + std::to_string(q.record_id));
    (train_ids.contains(q.record_id) ? c.qa_train : c.qa_eval).push_back(q);
  }
  c.records = std::move(records);
  c.qa = std::move(qa);
  return c;
}

inline Corpus generate_data(const DataSpec& spec) {
  SyntheticGrammar g;
  if (spec.word_banks) g.banks = *spec.word_banks;
  g.seed = spec.seed;
  auto records = generate_corpus(g, spec.records);
  auto qa = synthesize_corpus_qa(records, spec.seed, static_cast<std::size_t>(spec.qa_max));
  return assemble_corpus(std::move(records), std::move(qa));
}

/// Decoder pretraining documents: one per QA item, "text EOS question SEP
/// answer EOS", so the decoder learns to answer from preceding context; plus
/// the bare text of records without QA. Documents are streamed into windows
/// that leave one row for the leading BOS.
inline std::vector<std::vector<int>> pretraining_windows(const std::vector<CorpusRecord>& records, const std::vector<QaItem>& qa,
                                                         int max_seq, std::uint64_t seed) {
  if (max_seq < 2) throw ConfigError("pretraining: max_seq must be at least 2");
  std::map<int, const CorpusRecord*> by_id;
  for (const auto& r : records) by_id[r.id] = &r;
  std::set<int> asked;
  std::vector<std::vector<int>> docs;
  for (const auto& q : qa) {
    const auto it = by_id.find(q.record_id);
    if (it == by_id.end()) continue;
    asked.insert(q.record_id);
    auto doc = encode(it->second->text);
    doc.push_back(kEosToken);
    const auto qt = encode(q.question);
    doc.insert(doc.end(), qt.begin(), qt.end());
    doc.push_back(kSepToken);
    const auto a = encode_answer(q.answer);
    doc.insert(doc.end(), a.begin(), a.end());
    docs.push_back(std::move(doc));
  }
  for (const auto& r : records)
    if (!asked.contains(r.id)) {
      auto doc = encode(r.text);
      doc.push_back(kEosToken);
      docs.push_back(std::move(doc));
    }
  return stream_windows(std::move(docs), static_cast<std::size_t>(max_seq - 1), seed);
}

/// Stage-1 and Stage-2 examples for one donor.
struct DonorData {
  std::vector<Stage1Example> stage1_train, stage1_val;
  std::vector<Stage2Example> stage2_train, stage2_val;
};

inline DonorData build_donor_data(const Transformer& donor, const Corpus& corpus, int layer, int extra_positions, std::uint64_t seed) {
  DonorData d;
  d.stage1_train = build_stage1_examples(donor, corpus.split.train, layer, extra_positions, seed);
  d.stage1_val = build_stage1_examples(donor, corpus.split.eval, layer, 0, seed);
  d.stage2_train = build_stage2_examples(donor, corpus.split.train, corpus.qa_train, layer);
  d.stage2_val = build_stage2_examples(donor, corpus.split.eval, corpus.qa_eval, layer);
  return d;
}

}  // namespace uav
