#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace uav {

// Byte-level vocabulary. Control bytes below 0x20 never occur in corpus text
// and are reused as special tokens.
inline constexpr int kVocabSize = 256;
inline constexpr int kBosToken = 0x02;
inline constexpr int kEosToken = 0x04;
inline constexpr int kSepToken = 0x1F;

inline std::vector<int> encode(std::string_view text) {
  std::vector<int> out;
  out.reserve(text.size());
  for (const char c : text) out.push_back(static_cast<unsigned char>(c));
  return out;
}

/// Answer tokens with the end-of-sequence marker appended.
inline std::vector<int> encode_answer(std::string_view text) {
  auto out = encode(text);
  out.push_back(kEosToken);
  return out;
}

/// Drops special tokens and anything outside the byte range.
inline std::string decode(const std::vector<int>& tokens) {
  std::string out;
  for (const int t : tokens) {
    if (t < 0x20 || t > 0xFF) continue;
    out.push_back(static_cast<char>(t));
  }
  return out;
}

}  // namespace uav
