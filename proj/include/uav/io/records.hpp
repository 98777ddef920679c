#pragma once

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "uav/data/qa.hpp"
#include "uav/eval/metrics.hpp"

namespace uav {

namespace detail {

inline std::vector<nlohmann::json> read_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open '" + path.string() + "'");
  std::vector<nlohmann::json> out;
  std::string line;
  for (int n = 1; std::getline(in, line); ++n) {
    if (line.empty()) continue;
    try {
      out.push_back(nlohmann::json::parse(line));
    } catch (const nlohmann::json::parse_error&) {
      throw ValidationError(path.string() + ":" + std::to_string(n) + ": not a JSON record");
    }
  }
  return out;
}

template <typename V>
V field(const nlohmann::json& j, const char* key, const std::string& where) {
  if (!j.is_object() || !j.contains(key)) throw ValidationError(where + ": missing field '" + key + "'");
  try {
    return j.at(key).get<V>();
  } catch (const nlohmann::json::exception&) {
    throw ValidationError(where + ": field '" + key + "' has the wrong type");
  }
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IntegrityError(IntegrityError::Kind::io, "cannot open '" + path.string() + "' for writing");
  out << text;
  if (!out) throw IntegrityError(IntegrityError::Kind::io, "write to '" + path.string() + "' failed");
}

}  // namespace detail

inline std::string corpus_jsonl(const std::vector<CorpusRecord>& records) {
  std::string out;
  for (const auto& r : records) out += nlohmann::ordered_json{{"id", r.id}, {"source", r.source}, {"text", r.text}}.dump() + "\n";
  return out;
}

inline std::string qa_jsonl(const std::vector<QaItem>& items) {
  std::string out;
  for (const auto& q : items)
    out += nlohmann::ordered_json{{"record_id", q.record_id}, {"mode", task_tag_name(q.mode)}, {"question", q.question}, {"answer", q.answer}}
               .dump() +
           "\n";
  return out;
}

/// Reads a corpus file and re-checks the record invariants.
inline std::vector<CorpusRecord> read_corpus(const std::filesystem::path& path) {
  std::vector<CorpusRecord> out;
  int n = 0;
  for (const auto& j : detail::read_jsonl(path)) {
    const auto where = path.string() + ": record " + std::to_string(++n);
    CorpusRecord r;
    r.id = detail::field<int>(j, "id", where);
    r.source = detail::field<std::string>(j, "source", where);
    r.text = detail::field<std::string>(j, "text", where);
    const auto& tags = source_tags();
    if (std::find(tags.begin(), tags.end(), r.source) == tags.end()) throw ValidationError(where + ": unknown source '" + r.source + "'");
    r.subtype = (r.source == "sentiment" || r.source == "topic") ? Subtype::comprehension : Subtype::factual;
    if (r.text.size() < kMinRecordChars || r.text.size() > kMaxRecordTokens) throw ValidationError(where + ": text violates the length bounds");
    out.push_back(std::move(r));
  }
  return out;
}

inline std::vector<QaItem> read_qa(const std::filesystem::path& path) {
  std::vector<QaItem> out;
  int n = 0;
  for (const auto& j : detail::read_jsonl(path)) {
    const auto where = path.string() + ": item " + std::to_string(++n);
    QaItem q;
    q.record_id = detail::field<int>(j, "record_id", where);
    q.mode = parse_task_tag(detail::field<std::string>(j, "mode", where));
    q.question = detail::field<std::string>(j, "question", where);
    q.answer = detail::field<std::string>(j, "answer", where);
    out.push_back(std::move(q));
  }
  return out;
}

/// One row of a batch-scoring file.
struct PredictionRow {
  std::string id;
  Category category = Category::overall;
  std::string prediction;
  std::string reference;
};

inline std::vector<PredictionRow> read_predictions(const std::filesystem::path& path) {
  std::vector<PredictionRow> out;
  int n = 0;
  for (const auto& j : detail::read_jsonl(path)) {
    const auto where = path.string() + ": row " + std::to_string(++n);
    PredictionRow r;
    if (!j.is_object() || !j.contains("id")) throw ValidationError(where + ": missing field 'id'");
    r.id = j.at("id").is_string() ? j.at("id").get<std::string>() : j.at("id").dump();
    r.category = parse_category(detail::field<std::string>(j, "category", where));
    if (r.category == Category::overall) throw ValidationError(where + ": 'overall' is not a row category");
    r.prediction = detail::field<std::string>(j, "prediction", where);
    r.reference = detail::field<std::string>(j, "reference", where);
    out.push_back(std::move(r));
  }
  return out;
}

}  // namespace uav
