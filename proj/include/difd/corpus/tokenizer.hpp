#pragma once

#include <algorithm>
#include <cctype>
#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

namespace difd::corpus {

struct Token {
  std::string text;
  std::size_t begin = 0;  // byte offsets into the source text
  std::size_t end = 0;
};

namespace detail {

enum class CharClass { space, punct, word };

inline CharClass classify(unsigned char c) {
  if (std::isspace(c)) return CharClass::space;
  if (c < 0x80 && std::ispunct(c)) return CharClass::punct;
  return CharClass::word;
}

}  // namespace detail

/// Lowercases and splits on whitespace and at punctuation; every punctuation
/// character becomes its own token. Non-ASCII bytes are word characters.
/// Word runs are additionally cut at each byte offset in `breaks`.
inline std::vector<Token> tokenize(std::string_view text, std::vector<std::size_t> breaks = {}) {
  std::sort(breaks.begin(), breaks.end());
  auto is_break = [&](std::size_t i) { return std::binary_search(breaks.begin(), breaks.end(), i); };

  std::vector<Token> out;
  std::size_t i = 0;
  while (i < text.size()) {
    const auto cls = detail::classify(static_cast<unsigned char>(text[i]));
    if (cls == detail::CharClass::space) {
      ++i;
      continue;
    }
    std::size_t j = i + 1;
    if (cls == detail::CharClass::word) {
      while (j < text.size() && detail::classify(static_cast<unsigned char>(text[j])) == detail::CharClass::word &&
             !is_break(j)) {
        ++j;
      }
    }
    Token tok{std::string(text.substr(i, j - i)), i, j};
    for (auto& c : tok.text) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    out.push_back(std::move(tok));
    i = j;
  }
  return out;
}

inline std::vector<std::string> tokenize_words(std::string_view text) {
  std::vector<std::string> words;
  for (auto& t : tokenize(text)) words.push_back(std::move(t.text));
  return words;
}

/// Byte offset of every code point, plus the total length as a final entry.
/// Character offsets in annotation files count code points.
inline std::vector<std::size_t> codepoint_byte_offsets(std::string_view text) {
  std::vector<std::size_t> offsets;
  for (std::size_t i = 0; i < text.size(); ++i) {
    if ((static_cast<unsigned char>(text[i]) & 0xC0) != 0x80) offsets.push_back(i);
  }
  offsets.push_back(text.size());
  return offsets;
}

}  // namespace difd::corpus
