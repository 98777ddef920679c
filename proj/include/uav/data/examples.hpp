#pragma once

#include <map>
#include <vector>

#include "uav/data/qa.hpp"
#include "uav/train/losses.hpp"

namespace uav {

/// Donor activations for every position of a record, computed in one pass.
template <std::floating_point T>
struct RecordActivations {
  std::vector<int> tokens;
  BasicTensor<T> hidden;  // positions x d_donor

  [[nodiscard]] Activation at(const BasicTransformer<T>& donor, int layer, int position) const {
    Activation a;
    const auto d = hidden.dim(1);
    const auto row = hidden.data().subspan(static_cast<std::size_t>(position) * d, d);
    a.vector.assign(row.begin(), row.end());
    a.layer = layer;
    a.position = position;
    a.donor_id = donor.id();
    a.source_hash = token_hash(tokens);
    return a;
  }
};

template <std::floating_point T>
RecordActivations<T> record_activations(const BasicTransformer<T>& donor, const CorpusRecord& r, int layer) {
  if (donor.params().parameter_count(true) != 0) throw StateError("record_activations: donor must be frozen");
  RecordActivations<T> out{encode(r.text), {}};
  out.hidden = donor.hidden_state(out.tokens, layer);
  return out;
}

/// Stage-1 examples: per record the final position plus `extra_positions`
/// positions drawn uniformly (with a per-record stream).
template <std::floating_point T>
std::vector<Stage1Example> build_stage1_examples(const BasicTransformer<T>& donor, const std::vector<CorpusRecord>& records, int layer,
                                                 int extra_positions, std::uint64_t seed) {
  if (extra_positions < 0) throw ConfigError("stage1 examples: extra_positions must be non-negative");
  std::vector<Stage1Example> out;
  for (const auto& r : records) {
    const auto acts = record_activations(donor, r, layer);
    const int last = static_cast<int>(acts.tokens.size()) - 1;
    std::vector<int> positions{last};
    RngState rng = RngState(seed).fork(static_cast<std::uint64_t>(r.id));
    for (int k = 0; k < extra_positions; ++k) positions.push_back(static_cast<int>(rng.below(acts.tokens.size())));
    for (const int p : positions) out.push_back({acts.tokens, p, acts.at(donor, layer, p)});
  }
  return out;
}

/// Stage-2 examples: the activation is the record's final-token state.
template <std::floating_point T>
std::vector<Stage2Example> build_stage2_examples(const BasicTransformer<T>& donor, const std::vector<CorpusRecord>& records,
                                                 const std::vector<QaItem>& qa, int layer) {
  std::map<int, const CorpusRecord*> by_id;
  for (const auto& r : records) by_id[r.id] = &r;
  std::map<int, Activation> cache;
  std::vector<Stage2Example> out;
  for (const auto& item : qa) {
    const auto it = by_id.find(item.record_id);
    if (it == by_id.end()) continue;  // item belongs to the other split
    auto c = cache.find(item.record_id);
    if (c == cache.end()) {
      const auto acts = record_activations(donor, *it->second, layer);
      c = cache.emplace(item.record_id, acts.at(donor, layer, static_cast<int>(acts.tokens.size()) - 1)).first;
    }
    out.push_back({c->second, encode(item.question), encode_answer(item.answer), item.mode});
  }
  return out;
}

/// Pretraining text for the decoder: record texts and "question SEP answer EOS" strings.
inline std::vector<std::vector<int>> pretraining_sequences(const std::vector<CorpusRecord>& records, const std::vector<QaItem>& qa) {
  std::vector<std::vector<int>> out;
  for (const auto& r : records) {
    auto t = encode(r.text);
    t.push_back(kEosToken);
    out.push_back(std::move(t));
  }
  for (const auto& item : qa) {
    auto t = encode(item.question);
    t.push_back(kSepToken);
    const auto a = encode_answer(item.answer);
    t.insert(t.end(), a.begin(), a.end());
    out.push_back(std::move(t));
  }
  return out;
}

/// Shuffles the documents, concatenates them into one token stream and cuts
/// it into consecutive windows of `window` tokens. Document starts then land
/// at every offset, so the decoder does not tie them to early positions.
inline std::vector<std::vector<int>> stream_windows(std::vector<std::vector<int>> docs, std::size_t window, std::uint64_t seed) {
  if (window == 0) throw ConfigError("stream_windows: window must be positive");
  RngState rng(seed);
  shuffle(docs, rng);
  std::vector<int> all;
  for (const auto& d : docs) all.insert(all.end(), d.begin(), d.end());
  std::vector<std::vector<int>> out;
  for (std::size_t k = 0; k + window <= all.size(); k += window)
    out.emplace_back(all.begin() + static_cast<std::ptrdiff_t>(k), all.begin() + static_cast<std::ptrdiff_t>(k + window));
  if (out.empty() && !all.empty()) out.push_back(std::move(all));
  return out;
}

}  // namespace uav
