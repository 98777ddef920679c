#pragma once

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <map>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include "uav/core/errors.hpp"
#include "uav/train/losses.hpp"

namespace uav {

struct NormalizedText {
  std::string original;
  std::vector<std::string> tokens;
  std::string chars;  // lowercase, whitespace removed
};

namespace detail {

inline std::string lowercase(std::string_view s) {
  std::string out(s);
  for (auto& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

inline std::vector<std::string> split_ws(std::string_view s) {
  std::vector<std::string> out;
  std::string cur;
  for (const char c : s) {
    if (std::isspace(static_cast<unsigned char>(c))) {
      if (!cur.empty()) out.push_back(std::move(cur));
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

}  // namespace detail

/// Lowercase + whitespace tokenization (ROUGE-L, chrF++, embedding score).
inline NormalizedText normalize_plain(std::string_view text) {
  NormalizedText n;
  n.original = std::string(text);
  const auto lower = detail::lowercase(text);
  n.tokens = detail::split_ws(lower);
  for (const char c : lower)
    if (!std::isspace(static_cast<unsigned char>(c))) n.chars.push_back(c);
  return n;
}

/// QA-style normalization: lowercase, drop punctuation and the articles
/// a/an/the, collapse whitespace.
inline NormalizedText normalize_answer(std::string_view text) {
  NormalizedText n;
  n.original = std::string(text);
  std::string stripped;
  for (const char c : detail::lowercase(text))
    if (!std::ispunct(static_cast<unsigned char>(c))) stripped.push_back(c);
  for (auto& w : detail::split_ws(stripped))
    if (w != "a" && w != "an" && w != "the") n.tokens.push_back(std::move(w));
  for (const auto& w : n.tokens) n.chars += w;
  return n;
}

inline double f_beta(double precision, double recall, double beta) {
  const double b2 = beta * beta;
  const double denom = recall + b2 * precision;
  return denom > 0.0 ? (1.0 + b2) * precision * recall / denom : 0.0;
}

inline double token_f1(std::string_view prediction, std::string_view reference) {
  const auto p = normalize_answer(prediction).tokens;
  const auto r = normalize_answer(reference).tokens;
  if (p.empty() && r.empty()) return 1.0;
  if (p.empty() || r.empty()) return 0.0;
  std::map<std::string, int> counts;
  for (const auto& t : r) ++counts[t];
  int common = 0;
  for (const auto& t : p) {
    auto it = counts.find(t);
    if (it != counts.end() && it->second > 0) {
      --it->second;
      ++common;
    }
  }
  if (common == 0) return 0.0;
  const double precision = static_cast<double>(common) / static_cast<double>(p.size());
  const double recall = static_cast<double>(common) / static_cast<double>(r.size());
  return 2.0 * precision * recall / (precision + recall);
}

template <typename Seq>
std::size_t lcs_length(const Seq& x, const Seq& y) {
  std::vector<std::size_t> prev(y.size() + 1, 0), cur(y.size() + 1, 0);
  for (std::size_t i = 1; i <= x.size(); ++i) {
    for (std::size_t j = 1; j <= y.size(); ++j)
      cur[j] = x[i - 1] == y[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    std::swap(prev, cur);
  }
  return prev[y.size()];
}

inline double rouge_l(std::string_view prediction, std::string_view reference, double beta = 1.0) {
  if (!(beta > 0.0)) throw ConfigError("rouge_l: beta must be positive");
  const auto x = normalize_plain(prediction).tokens;
  const auto y = normalize_plain(reference).tokens;
  if (x.empty() && y.empty()) return 1.0;
  if (x.empty() || y.empty()) return 0.0;
  const auto lcs = static_cast<double>(lcs_length(x, y));
  return f_beta(lcs / static_cast<double>(x.size()), lcs / static_cast<double>(y.size()), beta);
}

namespace detail {

inline std::map<std::string, int> char_ngrams(const std::string& s, std::size_t n) {
  std::map<std::string, int> out;
  for (std::size_t i = 0; i + n <= s.size(); ++i) ++out[s.substr(i, n)];
  return out;
}

inline std::map<std::vector<std::string>, int> word_ngrams(const std::vector<std::string>& w, std::size_t n) {
  std::map<std::vector<std::string>, int> out;
  for (std::size_t i = 0; i + n <= w.size(); ++i) ++out[std::vector<std::string>(w.begin() + static_cast<std::ptrdiff_t>(i),
                                                                                  w.begin() + static_cast<std::ptrdiff_t>(i + n))];
  return out;
}

struct FamilyScore {
  double precision = 0.0;
  double recall = 0.0;
  int orders = 0;
};

// Averages clipped precision/recall over the orders where at least one side
// has n-grams; an order present on one side only contributes zero.
template <typename Counts>
void add_order(FamilyScore& f, const Counts& hyp, const Counts& ref) {
  if (hyp.empty() && ref.empty()) return;
  ++f.orders;
  if (hyp.empty() || ref.empty()) return;
  int match = 0, nh = 0, nr = 0;
  for (const auto& [g, c] : hyp) {
    nh += c;
    const auto it = ref.find(g);
    if (it != ref.end()) match += std::min(c, it->second);
  }
  for (const auto& [g, c] : ref) nr += c;
  f.precision += static_cast<double>(match) / nh;
  f.recall += static_cast<double>(match) / nr;
}

}  // namespace detail

inline constexpr int kChrfCharOrder = 6;
inline constexpr int kChrfWordOrder = 2;
inline constexpr double kChrfBeta = 2.0;

inline double chrf_pp(std::string_view prediction, std::string_view reference) {
  const auto h = normalize_plain(prediction);
  const auto r = normalize_plain(reference);
  if (h.chars.empty() && r.chars.empty()) return 1.0;
  if (h.chars.empty() || r.chars.empty()) return 0.0;
  detail::FamilyScore ch, wd;
  for (int n = 1; n <= kChrfCharOrder; ++n)
    detail::add_order(ch, detail::char_ngrams(h.chars, static_cast<std::size_t>(n)), detail::char_ngrams(r.chars, static_cast<std::size_t>(n)));
  for (int n = 1; n <= kChrfWordOrder; ++n)
    detail::add_order(wd, detail::word_ngrams(h.tokens, static_cast<std::size_t>(n)), detail::word_ngrams(r.tokens, static_cast<std::size_t>(n)));
  const auto mean = [](double sum, int k) { return k > 0 ? sum / k : 0.0; };
  const double p = (mean(ch.precision, ch.orders) + mean(wd.precision, wd.orders)) / 2.0;
  const double rc = (mean(ch.recall, ch.orders) + mean(wd.recall, wd.orders)) / 2.0;
  const double b2 = kChrfBeta * kChrfBeta;
  const double denom = b2 * p + rc;
  return denom > 0.0 ? (1.0 + b2) * p * rc / denom : 0.0;
}

/// Maps a token to a unit-norm vector. All vectors from one provider share a
/// dimension.
class EmbeddingProvider {
 public:
  virtual ~EmbeddingProvider() = default;
  [[nodiscard]] virtual std::vector<double> embed(const std::string& token) const = 0;
};

/// Exact-match embedding: distinct tokens are orthogonal. Tokens are indexed
/// on first sight, so the dimension is the vocabulary cap.
class OneHotProvider final : public EmbeddingProvider {
 public:
  explicit OneHotProvider(std::size_t capacity = 4096) : capacity_(capacity) {}

  [[nodiscard]] std::vector<double> embed(const std::string& token) const override {
    auto it = index_.find(token);
    if (it == index_.end()) {
      if (index_.size() >= capacity_) throw ProviderError("one-hot provider: vocabulary capacity exceeded");
      it = index_.emplace(token, index_.size()).first;
    }
    std::vector<double> v(capacity_, 0.0);
    v[it->second] = 1.0;
    return v;
  }

 private:
  std::size_t capacity_;
  mutable std::map<std::string, std::size_t> index_;
};

/// Static embedding from hashed character trigrams of "<token>", so tokens
/// sharing spelling fragments score a positive cosine.
class HashedTrigramProvider final : public EmbeddingProvider {
 public:
  explicit HashedTrigramProvider(std::size_t dim = 512) : dim_(dim) {
    if (dim == 0) throw ConfigError("hashed trigram provider: dimension must be positive");
  }

  [[nodiscard]] std::vector<double> embed(const std::string& token) const override {
    std::vector<double> v(dim_, 0.0);
    const std::string padded = "<" + token + ">";
    for (std::size_t i = 0; i + 3 <= padded.size(); ++i) {
      std::uint64_t h = 1469598103934665603ULL;
      for (std::size_t k = i; k < i + 3; ++k) h = (h ^ static_cast<unsigned char>(padded[k])) * 1099511628211ULL;
      v[h % dim_] += (h >> 63) ? 1.0 : -1.0;
    }
    double norm = 0.0;
    for (const double x : v) norm += x * x;
    if (norm == 0.0) {
      v[0] = 1.0;
      return v;
    }
    for (auto& x : v) x /= std::sqrt(norm);
    return v;
  }

 private:
  std::size_t dim_;
};

namespace detail {

inline std::vector<std::vector<double>> embed_all(const std::vector<std::string>& tokens, const EmbeddingProvider& provider) {
  std::vector<std::vector<double>> out;
  for (const auto& t : tokens) {
    auto v = provider.embed(t);
    double norm = 0.0;
    for (const double x : v) {
      if (!std::isfinite(x)) throw ProviderError("embedding provider returned a non-finite vector for '" + t + "'");
      norm += x * x;
    }
    if (std::abs(std::sqrt(norm) - 1.0) > 1e-6) throw ProviderError("embedding provider returned a non-unit vector for '" + t + "'");
    if (!out.empty() && v.size() != out.front().size()) throw ProviderError("embedding provider returned vectors of differing dimension");
    out.push_back(std::move(v));
  }
  return out;
}

}  // namespace detail

/// Greedy-match embedding F-score without baseline rescaling. Clamped to
/// [-1, 1] since the harmonic form is unbounded for mixed-sign P and R.
inline double embed_f(std::string_view prediction, std::string_view reference, const EmbeddingProvider& provider) {
  const auto x = normalize_plain(prediction).tokens;
  const auto y = normalize_plain(reference).tokens;
  if (x.empty() && y.empty()) return 1.0;
  if (x.empty() || y.empty()) return 0.0;
  const auto ex = detail::embed_all(x, provider);
  const auto ey = detail::embed_all(y, provider);
  if (ex.front().size() != ey.front().size()) throw ProviderError("embedding provider returned vectors of differing dimension");
  std::vector<double> best_x(x.size(), -2.0), best_y(y.size(), -2.0);
  for (std::size_t i = 0; i < ex.size(); ++i)
    for (std::size_t j = 0; j < ey.size(); ++j) {
      double c = 0.0;
      for (std::size_t k = 0; k < ex[i].size(); ++k) c += ex[i][k] * ey[j][k];
      best_x[i] = std::max(best_x[i], c);
      best_y[j] = std::max(best_y[j], c);
    }
  double p = 0.0, r = 0.0;
  for (const double v : best_x) p += v;
  for (const double v : best_y) r += v;
  p /= static_cast<double>(x.size());
  r /= static_cast<double>(y.size());
  if (!(p + r > 0.0)) return 0.0;
  return std::clamp(2.0 * p * r / (p + r), -1.0, 1.0);
}

enum class Category { classification, fact, gist, overall };

inline std::string category_name(Category c) {
  switch (c) {
    case Category::classification: return "classification";
    case Category::fact: return "fact";
    case Category::gist: return "gist";
    case Category::overall: return "overall";
  }
  return "?";
}

inline Category parse_category(const std::string& s) {
  for (const auto c : {Category::classification, Category::fact, Category::gist, Category::overall})
    if (category_name(c) == s) return c;
  throw ValidationError("unknown category '" + s + "'");
}

inline Category category_of(TaskTag t) {
  switch (t) {
    case TaskTag::factual: return Category::fact;
    case TaskTag::comprehension: return Category::classification;
    case TaskTag::gist: return Category::gist;
  }
  return Category::overall;
}

struct Scores {
  double token_f1 = 0.0;
  double rouge_l = 0.0;
  double chrf_pp = 0.0;
  double embed_f = 0.0;
};

inline Scores score_all(std::string_view prediction, std::string_view reference, const EmbeddingProvider& provider) {
  return {token_f1(prediction, reference), rouge_l(prediction, reference), chrf_pp(prediction, reference),
          embed_f(prediction, reference, provider)};
}

inline constexpr std::array<const char*, 4> kMetricNames{"token_f1", "rouge_l", "chrf_pp", "embed_f"};

inline double metric_value(const Scores& s, std::size_t k) {
  switch (k) {
    case 0: return s.token_f1;
    case 1: return s.rouge_l;
    case 2: return s.chrf_pp;
    default: return s.embed_f;
  }
}

struct ScoredExample {
  Category category = Category::overall;
  Scores scores;
};

struct Stat {
  double mean = 0.0;
  double std = 0.0;
  std::size_t count = 0;
};

struct MetricReport {
  std::vector<ScoredExample> examples;
  std::map<Category, std::array<Stat, 4>> aggregates;  // per metric, in kMetricNames order
};

inline Stat population_stat(const std::vector<double>& v) {
  Stat s;
  s.count = v.size();
  if (v.empty()) return s;
  for (const double x : v) s.mean += x;
  s.mean /= static_cast<double>(v.size());
  double var = 0.0;
  for (const double x : v) var += (x - s.mean) * (x - s.mean);
  s.std = std::sqrt(var / static_cast<double>(v.size()));
  return s;
}

/// Mean and population std per requested category; `overall` covers every
/// example.
inline MetricReport aggregate(std::vector<ScoredExample> examples, const std::vector<Category>& categories) {
  MetricReport report;
  for (const auto c : categories) {
    std::array<Stat, 4> stats;
    for (std::size_t k = 0; k < 4; ++k) {
      std::vector<double> v;
      for (const auto& e : examples)
        if (c == Category::overall || e.category == c) v.push_back(metric_value(e.scores, k));
      if (v.empty()) throw AggregationError("aggregate: category '" + category_name(c) + "' has no examples");
      stats[k] = population_stat(v);
    }
    report.aggregates[c] = stats;
  }
  report.examples = std::move(examples);
  return report;
}

inline const std::vector<Category>& report_categories() {
  static const std::vector<Category> all{Category::classification, Category::fact, Category::gist, Category::overall};
  return all;
}

}  // namespace uav
