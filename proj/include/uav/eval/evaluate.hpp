#pragma once

#include <cstdio>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "uav/eval/metrics.hpp"
#include "uav/train/losses.hpp"

namespace uav {

struct EvalRow {
  std::string id;
  Category category = Category::overall;
  std::string question;
  std::string reference;
  std::string prediction;
  Scores scores;
};

struct EvalReport {
  std::string config_digest;
  std::vector<EvalRow> rows;
  MetricReport metrics;
};

/// Answer text for one activation-grounded question: soft prefix, question,
/// separator, then greedy decoding until end-of-sequence.
template <std::floating_point T>
std::string verbalize(const BasicAdapter<T>& adapter, const BasicTransformer<T>& decoder, const Activation& activation,
                      const std::vector<int>& question, int max_new_tokens) {
  RngState unused;
  const auto prefix = adapter.forward(activation, Mode::eval, unused);
  auto prompt = question;
  prompt.push_back(kSepToken);
  return decode(greedy_decode(decoder, &prefix, prompt, max_new_tokens, kEosToken));
}

/// Aggregates rows over the categories present plus `overall`. An empty row
/// set raises AggregationError.
inline EvalReport make_report(std::string config_digest, std::vector<EvalRow> rows) {
  std::set<Category> present;
  std::vector<ScoredExample> scored;
  for (const auto& r : rows) {
    present.insert(r.category);
    scored.push_back({r.category, r.scores});
  }
  std::vector<Category> cats(present.begin(), present.end());
  cats.push_back(Category::overall);
  EvalReport report;
  report.config_digest = std::move(config_digest);
  report.metrics = aggregate(std::move(scored), cats);
  report.rows = std::move(rows);
  return report;
}

struct EvalOptions {
  int max_new_tokens = 32;
  std::size_t max_examples = 0;  // 0 = all
  double rouge_beta = 1.0;
};

template <std::floating_point T>
EvalReport evaluate(const BasicAdapter<T>& adapter, const BasicTransformer<T>& decoder, const std::vector<Stage2Example>& examples,
                    const EmbeddingProvider& provider, const EvalOptions& options, std::string config_digest) {
  const std::size_t n = options.max_examples == 0 ? examples.size() : std::min(options.max_examples, examples.size());
  std::vector<EvalRow> rows;
  rows.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto& ex = examples[i];
    EvalRow row;
    row.id = std::to_string(i);
    row.category = category_of(ex.task);
    row.question = decode(ex.question);
    row.reference = decode(ex.answer);
    row.prediction = verbalize(adapter, decoder, ex.activation, ex.question, options.max_new_tokens);
    row.scores = {token_f1(row.prediction, row.reference), rouge_l(row.prediction, row.reference, options.rouge_beta),
                  chrf_pp(row.prediction, row.reference), embed_f(row.prediction, row.reference, provider)};
    rows.push_back(std::move(row));
  }
  return make_report(std::move(config_digest), std::move(rows));
}

/// Machine-readable report: one record per example, then one per category.
inline std::string report_jsonl(const EvalReport& r) {
  std::string out;
  for (const auto& row : r.rows) {
    nlohmann::ordered_json j{{"kind", "example"}, {"id", row.id}, {"category", category_name(row.category)},
                             {"question", row.question}, {"reference", row.reference}, {"prediction", row.prediction}};
    for (std::size_t k = 0; k < kMetricNames.size(); ++k) j[kMetricNames[k]] = metric_value(row.scores, k);
    out += j.dump() + "\n";
  }
  for (const auto& [cat, stats] : r.metrics.aggregates) {
    nlohmann::ordered_json j{{"kind", "aggregate"}, {"category", category_name(cat)}, {"count", stats[0].count}};
    for (std::size_t k = 0; k < kMetricNames.size(); ++k) j[kMetricNames[k]] = {{"mean", stats[k].mean}, {"std", stats[k].std}};
    out += j.dump() + "\n";
  }
  out += nlohmann::ordered_json{{"kind", "config"}, {"config_digest", r.config_digest}}.dump() + "\n";
  return out;
}

/// Fixed-width table: one column group per category, mean(std) per metric.
inline std::string report_table(const EvalReport& r) {
  std::string out;
  char buf[128];
  std::snprintf(buf, sizeof buf, "%-10s", "metric");
  out += buf;
  for (const auto& [cat, stats] : r.metrics.aggregates) {
    std::snprintf(buf, sizeof buf, " | %-20s", (category_name(cat) + " (n=" + std::to_string(stats[0].count) + ")").c_str());
    out += buf;
  }
  out += "\n";
  out += std::string(10 + 23 * r.metrics.aggregates.size(), '-') + "\n";
  for (std::size_t k = 0; k < kMetricNames.size(); ++k) {
    std::snprintf(buf, sizeof buf, "%-10s", kMetricNames[k]);
    out += buf;
    for (const auto& [cat, stats] : r.metrics.aggregates) {
      std::snprintf(buf, sizeof buf, " | %8.4f (%8.4f)   ", stats[k].mean, stats[k].std);
      out += buf;
    }
    out += "\n";
  }
  out += "config " + r.config_digest + "\n";
  return out;
}

}  // namespace uav
