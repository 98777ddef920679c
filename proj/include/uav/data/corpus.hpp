#pragma once

#include <algorithm>
#include <array>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "uav/core/errors.hpp"
#include "uav/core/rng.hpp"
#include "uav/data/tokenizer.hpp"

namespace uav {

inline constexpr std::size_t kMaxRecordTokens = 64;
inline constexpr std::size_t kMinRecordChars = 30;

enum class Subtype { factual, comprehension };

inline std::string subtype_name(Subtype s) { return s == Subtype::factual ? "factual" : "comprehension"; }

struct CorpusRecord {
  int id = 0;
  std::string source;
  Subtype subtype = Subtype::factual;
  std::string text;
  std::map<std::string, std::string> slots;  // values used to fill the template
};

inline const std::array<std::string, 4>& source_tags() {
  static const std::array<std::string, 4> tags{"bio-factual", "place-factual", "sentiment", "topic"};
  return tags;
}

using WordBanks = std::map<std::string, std::vector<std::string>>;

inline WordBanks default_word_banks() {
  return {
      {"first_names", {"Anna", "Boris", "Clara", "Dmitri", "Elena", "Felix", "Greta", "Hugo", "Irene", "Jonas", "Kira", "Leon"}},
      {"last_names", {"Novak", "Berg", "Costa", "Duval", "Ekman", "Fischer", "Grant", "Hale", "Ivers", "Jensen", "Kato", "Lund"}},
      {"professions", {"painter", "chemist", "pilot", "baker", "lawyer", "nurse", "architect", "farmer", "poet", "surgeon", "tailor", "sailor"}},
      {"cities", {"Lisbon", "Oslo", "Cairo", "Lima", "Kyoto", "Dublin", "Quito", "Hanoi", "Prague", "Perth", "Tunis", "Riga",
                  "Sofia", "Turin", "Dakar", "Minsk"}},
      {"years", {"1921", "1934", "1947", "1952", "1968", "1973", "1985", "1990", "1908", "1916", "1961", "1979"}},
      {"place_kinds", {"port city", "mountain town", "river city", "desert town", "island town", "lake town", "border town", "market town"}},
      {"countries", {"Chile", "Norway", "Egypt", "Japan", "Peru", "Italy", "Kenya", "Spain", "Canada", "India", "Greece", "Poland"}},
      {"features", {"bridges", "markets", "museums", "gardens", "temples", "beaches", "festivals", "canals", "castles", "vineyards",
                    "mines", "harbors"}},
      {"products", {"blender", "kettle", "laptop", "backpack", "camera", "jacket", "lamp", "tent", "printer", "bicycle", "watch", "sofa"}},
      {"positive", {"excellent", "sturdy", "lovely", "reliable", "superb", "pleasant", "solid", "great", "charming", "elegant"}},
      {"negative", {"flimsy", "awful", "noisy", "broken", "clumsy", "poor", "shoddy", "dreadful", "useless", "fragile"}},
      {"aspects", {"service", "delivery", "price", "design", "packaging", "manual", "battery", "support"}},
      {"orgs", {"Helix Corp", "Norda Group", "the council", "Vanta Labs", "the ministry", "Orbis Inc", "Kestrel Co", "the mayor",
                "Pioneer Ltd", "Aurel Bank", "the union", "Solis Corp"}},
      {"topics", {"transit", "energy", "housing", "tourism", "farming", "health", "science", "sports", "banking", "schools"}},
      {"regions", {"the north", "the south", "the coast", "the capital", "the valley", "the islands", "the east", "the west",
                   "the suburbs", "the delta"}},
      {"periods", {"spring", "summer", "autumn", "winter", "week", "month", "year", "quarter"}},
  };
}

/// Template grammar over the four source tags. Each record draws from an
/// independent stream keyed by (seed, id), so generation is deterministic.
struct SyntheticGrammar {
  WordBanks banks = default_word_banks();
  std::uint64_t seed = 0;

  void validate() const {
    static const std::array<const char*, 16> required{"first_names", "last_names", "professions", "cities", "years", "place_kinds",
                                                      "countries", "features", "products", "positive", "negative", "aspects",
                                                      "orgs", "topics", "regions", "periods"};
    for (const auto* name : required) {
      const auto it = banks.find(name);
      if (it == banks.end() || it->second.empty()) throw ConfigError(std::string("grammar: word bank '") + name + "' is empty");
      for (const auto& w : it->second)
        if (w.empty()) throw ConfigError(std::string("grammar: word bank '") + name + "' contains an empty entry");
    }
    for (const auto& [name, words] : banks)
      if (std::find(required.begin(), required.end(), name) == required.end()) throw ConfigError("grammar: unknown word bank '" + name + "'");
  }

  [[nodiscard]] const std::string& pick(const std::string& bank, RngState& rng) const {
    const auto& words = banks.at(bank);
    return words[rng.below(words.size())];
  }
};

namespace detail {

inline bool is_abbreviation(std::string_view word) {
  static const std::array<std::string_view, 16> known{"Dr.", "Mr.", "Mrs.", "Ms.", "St.", "Jr.", "Sr.", "Prof.",
                                                      "U.S.", "U.K.", "Ph.D.", "e.g.", "i.e.", "etc.", "vs.", "No."};
  if (std::find(known.begin(), known.end(), word) != known.end()) return true;
  // Single capital initials such as "J." are treated as abbreviations too.
  return word.size() == 2 && word[0] >= 'A' && word[0] <= 'Z' && word[1] == '.';
}

}  // namespace detail

/// Fits text into the record budget: text over 64 bytes is cut to its first
/// sentence (abbreviation periods are not boundaries), or failing that to the
/// longest word-aligned prefix. Returns nullopt when the result is shorter than
/// 30 characters or contains control bytes.
inline std::optional<std::string> normalize_length(std::string_view text) {
  for (const char c : text)
    if (static_cast<unsigned char>(c) < 0x20) return std::nullopt;
  std::string out(text);
  if (out.size() > kMaxRecordTokens) {
    std::optional<std::size_t> boundary;
    std::size_t word_start = 0;
    for (std::size_t i = 0; i < out.size(); ++i) {
      if (out[i] == ' ') {
        word_start = i + 1;
        continue;
      }
      const bool terminal = out[i] == '.' || out[i] == '!' || out[i] == '?';
      const bool at_break = i + 1 == out.size() || out[i + 1] == ' ';
      if (terminal && at_break && !(out[i] == '.' && detail::is_abbreviation(std::string_view(out).substr(word_start, i + 1 - word_start)))) {
        boundary = i + 1;
        break;
      }
    }
    if (boundary && *boundary <= kMaxRecordTokens) {
      out.resize(*boundary);
    } else {
      const auto cut = out.rfind(' ', kMaxRecordTokens);
      out.resize(cut == std::string::npos || cut == 0 ? kMaxRecordTokens : cut);
    }
  }
  if (out.size() < kMinRecordChars || out.size() > kMaxRecordTokens) return std::nullopt;
  return out;
}

namespace detail {

inline CorpusRecord draw_record(const SyntheticGrammar& g, int id, RngState& rng) {
  CorpusRecord r;
  r.id = id;
  r.source = source_tags()[static_cast<std::size_t>(id) % source_tags().size()];
  auto& s = r.slots;
  if (r.source == "bio-factual") {
    s["name"] = g.pick("first_names", rng) + " " + g.pick("last_names", rng);
    s["profession"] = g.pick("professions", rng);
    s["city"] = g.pick("cities", rng);
    s["year"] = g.pick("years", rng);
    const auto& p = s["profession"];
    const bool vowel = std::string_view("aeiou").find(p[0]) != std::string_view::npos;
    r.text = s["name"] + " is " + (vowel ? "an " : "a ") + p + " born in " + s["city"] + " in " + s["year"] + ".";
  } else if (r.source == "place-factual") {
    s["city"] = g.pick("cities", rng);
    s["kind"] = g.pick("place_kinds", rng);
    s["country"] = g.pick("countries", rng);
    s["feature"] = g.pick("features", rng);
    r.text = s["city"] + " is a " + s["kind"] + " in " + s["country"] + " known for its " + s["feature"] + ".";
  } else if (r.source == "sentiment") {
    r.subtype = Subtype::comprehension;
    s["tone"] = rng.below(2) == 0 ? "positive" : "negative";
    s["product"] = g.pick("products", rng);
    s["aspect"] = g.pick("aspects", rng);
    s["quality"] = g.pick(s["tone"], rng);
    s["aspect_quality"] = g.pick(s["tone"], rng);
    r.text = "The " + s["product"] + " was " + s["quality"] + " and the " + s["aspect"] + " felt " + s["aspect_quality"] + ".";
  } else {
    r.subtype = Subtype::comprehension;
    s["org"] = g.pick("orgs", rng);
    s["topic"] = g.pick("topics", rng);
    s["region"] = g.pick("regions", rng);
    s["period"] = g.pick("periods", rng);
    auto org = s["org"];
    if (org.rfind("the ", 0) == 0) org[0] = 'T';
    r.text = org + " announced new " + s["topic"] + " plans for " + s["region"] + " this " + s["period"] + ".";
  }
  return r;
}

}  // namespace detail

/// Template-filled records in id order, cycling through the source tags.
/// Draws that violate the length bounds are redrawn from the same stream.
inline std::vector<CorpusRecord> generate_corpus(const SyntheticGrammar& grammar, int count) {
  if (count < 1) throw ConfigError("generate_corpus: count must be at least 1");
  grammar.validate();
  std::vector<CorpusRecord> out;
  out.reserve(static_cast<std::size_t>(count));
  for (int id = 0; id < count; ++id) {
    RngState rng = RngState(grammar.seed).fork(static_cast<std::uint64_t>(id));
    bool done = false;
    for (int attempt = 0; attempt < 64 && !done; ++attempt) {
      auto r = detail::draw_record(grammar, id, rng);
      const auto fitted = normalize_length(r.text);
      if (fitted && *fitted == r.text) {
        out.push_back(std::move(r));
        done = true;
      }
    }
    if (!done) throw SynthesisError("generate_corpus: word banks cannot produce a record within the length bounds");
  }
  return out;
}

}  // namespace uav
