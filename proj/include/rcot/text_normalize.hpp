#pragma once

#include <array>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace rcot {

enum class Normalization { None = 0, StripZeroWidth = 1, FoldHomoglyphs = 2, Both = 3 };

// UTF-8 encodings of U+200B ZERO WIDTH SPACE, U+200C ZWNJ, U+200D ZWJ,
// U+FEFF BOM.
inline const std::array<std::string_view, 4>& zero_width_sequences() {
  static const std::array<std::string_view, 4> seqs = {
      "\xE2\x80\x8B",
      "\xE2\x80\x8C",
      "\xE2\x80\x8D",
      "\xEF\xBB\xBF",
  };
  return seqs;
}

inline std::string strip_zero_width(const std::string& text) {
  std::string out;
  out.reserve(text.size());
  std::size_t i = 0;
  while (i < text.size()) {
    bool matched = false;
    for (const auto seq : zero_width_sequences()) {
      if (std::string_view(text).substr(i).starts_with(seq)) {
        i += seq.size();
        matched = true;
        break;
      }
    }
    if (!matched) out.push_back(text[i++]);
  }
  return out;
}

// Latin character -> UTF-8 encoding of a visually confusable substitute.
// Covers exactly the default trigger's alphabet.
struct HomoglyphMap {
  std::vector<std::pair<char, std::string>> entries;

  const std::string* substitute_for(char c) const {
    for (const auto& [source, sub] : entries) {
      if (source == c) return &sub;
    }
    return nullptr;
  }
};

inline const HomoglyphMap& default_homoglyph_map() {
  static const HomoglyphMap map{{
      {'o', "\xD0\xBE"},  // U+043E
      {'c', "\xD1\x81"},  // U+0441
      {'p', "\xD1\x80"},  // U+0440
      {'i', "\xD1\x96"},  // U+0456
      {'y', "\xD1\x83"},  // U+0443
      {'t', "\xD1\x82"},  // U+0442
      {'h', "\xD2\xBB"},  // U+04BB
      {'g', "\xC9\xA1"},  // U+0261
      {'r', "\xD0\xB3"},  // U+0433
  }};
  return map;
}

// Reverse mapping: confusable substitutes fold back to their Latin source.
inline std::string fold_homoglyphs(const std::string& text, const HomoglyphMap& map = default_homoglyph_map()) {
  std::string out;
  out.reserve(text.size());
  std::size_t i = 0;
  while (i < text.size()) {
    bool matched = false;
    for (const auto& [source, sub] : map.entries) {
      if (std::string_view(text).substr(i).starts_with(sub)) {
        out.push_back(source);
        i += sub.size();
        matched = true;
        break;
      }
    }
    if (!matched) out.push_back(text[i++]);
  }
  return out;
}

inline std::string normalize_text(const std::string& text, Normalization mode) {
  switch (mode) {
    case Normalization::None: return text;
    case Normalization::StripZeroWidth: return strip_zero_width(text);
    case Normalization::FoldHomoglyphs: return fold_homoglyphs(text);
    case Normalization::Both: return fold_homoglyphs(strip_zero_width(text));
  }
  return text;
}

inline const char* normalization_name(Normalization mode) {
  switch (mode) {
    case Normalization::None: return "None";
    case Normalization::StripZeroWidth: return "StripZeroWidth";
    case Normalization::FoldHomoglyphs: return "FoldHomoglyphs";
    case Normalization::Both: return "Both";
  }
  return "None";
}

}  // namespace rcot
