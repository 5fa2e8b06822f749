#pragma once

#include <algorithm>
#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "difd/error.hpp"

namespace difd::corpus {

/// Class index order is also the argmax tie-break order.
enum class Polarity : int { positive = 0, negative = 1, neutral = 2 };
inline constexpr std::size_t kNumPolarities = 3;

enum class Domain : int { source = 0, target = 1 };

/// Tag index order used by the taggers' output layer.
enum class Tag : unsigned char { B = 0, I = 1, O = 2 };
inline constexpr std::size_t kNumTags = 3;

struct Span {
  std::size_t start = 0;
  std::size_t end = 0;  // exclusive

  std::size_t length() const { return end - start; }
  friend bool operator==(const Span&, const Span&) = default;
  friend auto operator<=>(const Span&, const Span&) = default;
};

inline std::string_view to_string(Polarity p) {
  switch (p) {
    case Polarity::positive: return "positive";
    case Polarity::negative: return "negative";
    case Polarity::neutral: return "neutral";
  }
  return "?";
}

inline std::optional<Polarity> polarity_from_string(std::string_view s) {
  if (s == "positive") return Polarity::positive;
  if (s == "negative") return Polarity::negative;
  if (s == "neutral") return Polarity::neutral;
  return std::nullopt;
}

inline std::string_view to_string(Domain d) { return d == Domain::source ? "source" : "target"; }

inline std::optional<Domain> domain_from_string(std::string_view s) {
  if (s == "source") return Domain::source;
  if (s == "target") return Domain::target;
  return std::nullopt;
}

inline char to_char(Tag t) { return t == Tag::B ? 'B' : t == Tag::I ? 'I' : 'O'; }

inline std::optional<Tag> tag_from_string(std::string_view s) {
  if (s == "B") return Tag::B;
  if (s == "I") return Tag::I;
  if (s == "O") return Tag::O;
  return std::nullopt;
}

/// One (sentence, focal aspect) pair. `tags` mark every aspect term of the
/// sentence, not only the focal one; `sentence_id` identifies the sentence so
/// that per-sentence losses can count each sentence once.
struct Instance {
  std::string id;
  std::string sentence_id;
  std::vector<std::string> tokens;
  Span aspect;
  std::vector<Tag> tags;
  std::optional<Polarity> polarity;
  Domain domain = Domain::source;

  friend bool operator==(const Instance&, const Instance&) = default;
};

}  // namespace difd::corpus
