#pragma once

#include <string>
#include <vector>

#include "uav/adapters/adapter.hpp"
#include "uav/data/tokenizer.hpp"
#include "uav/model/transformer.hpp"

namespace uav {

enum class TaskTag { factual, comprehension, gist };

inline std::string task_tag_name(TaskTag t) {
  switch (t) {
    case TaskTag::factual: return "factual";
    case TaskTag::comprehension: return "comprehension";
    case TaskTag::gist: return "gist";
  }
  return "factual";
}

inline TaskTag parse_task_tag(const std::string& s) {
  if (s == "factual") return TaskTag::factual;
  if (s == "comprehension") return TaskTag::comprehension;
  if (s == "gist") return TaskTag::gist;
  throw ValidationError("unknown task tag '" + s + "'");
}

/// Reconstruct tokens[0..position] from the activation at `position`.
struct Stage1Example {
  std::vector<int> tokens;
  int position = 0;
  Activation activation;
};

/// Answer an activation-grounded question. `answer` holds the full target
/// sequence including the terminating end-of-sequence token.
struct Stage2Example {
  Activation activation;
  std::vector<int> question;
  std::vector<int> answer;
  TaskTag task = TaskTag::factual;
};

inline void check_provenance(const Stage1Example& ex) {
  if (ex.position < 0 || static_cast<std::size_t>(ex.position) >= ex.tokens.size())
    throw IndexError("stage1: position " + std::to_string(ex.position) + " outside sequence of " + std::to_string(ex.tokens.size()));
  if (ex.activation.source_hash != token_hash(ex.tokens)) throw ProvenanceError("stage1: activation was not extracted from these tokens");
  if (ex.activation.position != ex.position) throw ProvenanceError("stage1: activation position does not match example position");
}

/// Input sequence and per-row targets for the reconstruction objective:
/// rows are [prefix ; t_0 .. t_{i-1}], row n-1+j predicts t_j.
inline void stage1_layout(const Stage1Example& ex, std::size_t n_soft, std::vector<int>& input, std::vector<int>& targets) {
  const auto i = static_cast<std::size_t>(ex.position);
  input.assign(ex.tokens.begin(), ex.tokens.begin() + static_cast<std::ptrdiff_t>(i));
  targets.assign(n_soft + i, kIgnoreTarget);
  for (std::size_t j = 0; j <= i; ++j) targets[n_soft - 1 + j] = ex.tokens[j];
}

/// Rows are [prefix ; x ; SEP ; y_1 .. y_{T-1}]; only answer rows carry targets.
inline void stage2_layout(const Stage2Example& ex, std::size_t n_soft, std::vector<int>& input, std::vector<int>& targets) {
  if (ex.answer.empty()) throw ValidationError("stage2: empty answer");
  input = ex.question;
  input.push_back(kSepToken);
  input.insert(input.end(), ex.answer.begin(), ex.answer.end() - 1);
  targets.assign(n_soft + input.size(), kIgnoreTarget);
  const std::size_t first = n_soft + ex.question.size();  // the separator row
  for (std::size_t j = 0; j < ex.answer.size(); ++j) targets[first + j] = ex.answer[j];
}

template <std::floating_point T>
BasicTensor<T> stage1_loss(const BasicAdapter<T>& adapter, const BasicTransformer<T>& decoder, const Stage1Example& ex, Mode mode,
                           RngState& rng) {
  check_provenance(ex);
  const auto prefix = adapter.forward(ex.activation, mode, rng);
  std::vector<int> input, targets;
  stage1_layout(ex, prefix.count(), input, targets);
  return cross_entropy(decoder.forward(input, &prefix, mode, rng), targets);
}

template <std::floating_point T>
BasicTensor<T> stage2_loss(const BasicAdapter<T>& adapter, const BasicTransformer<T>& decoder, const Stage2Example& ex, Mode mode,
                           RngState& rng) {
  const auto prefix = adapter.forward(ex.activation, mode, rng);
  std::vector<int> input, targets;
  stage2_layout(ex, prefix.count(), input, targets);
  return cross_entropy(decoder.forward(input, &prefix, mode, rng), targets);
}

/// Plain next-token objective used to pretrain the decoder: [BOS ; t_0 .. t_{k-1}] predicts t_0 .. t_k.
template <std::floating_point T>
BasicTensor<T> language_model_loss(const BasicTransformer<T>& decoder, const std::vector<int>& tokens, Mode mode, RngState& rng) {
  if (tokens.empty()) throw ValidationError("language model loss: empty sequence");
  std::vector<int> input{kBosToken};
  input.insert(input.end(), tokens.begin(), tokens.end() - 1);
  return cross_entropy(decoder.forward(input, mode, rng), tokens);
}

}  // namespace uav
