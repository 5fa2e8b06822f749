#pragma once

#include <algorithm>
#include <string>
#include <vector>

#include "difd/corpus/instance.hpp"
#include "difd/error.hpp"

namespace difd::corpus {

/// Sorted, disjoint spans -> B/I/O tags.
inline std::vector<Tag> encode_bio(const std::vector<Span>& spans, std::size_t length) {
  std::vector<Tag> tags(length, Tag::O);
  std::size_t prev_end = 0;
  for (std::size_t k = 0; k < spans.size(); ++k) {
    const auto& s = spans[k];
    if (s.start >= s.end || s.end > length) {
      fail(ErrorKind::data, "bio: span [" + std::to_string(s.start) + "," + std::to_string(s.end) +
                                ") invalid for length " + std::to_string(length));
    }
    if (k > 0 && s.start < prev_end) fail(ErrorKind::data, "bio: overlapping or unsorted spans");
    tags[s.start] = Tag::B;
    for (std::size_t i = s.start + 1; i < s.end; ++i) tags[i] = Tag::I;
    prev_end = s.end;
  }
  return tags;
}

/// Strict decode; an I that does not continue a span is an error.
inline std::vector<Span> decode_bio(const std::vector<Tag>& tags) {
  std::vector<Span> spans;
  for (std::size_t i = 0; i < tags.size(); ++i) {
    switch (tags[i]) {
      case Tag::B: spans.push_back({i, i + 1}); break;
      case Tag::I:
        if (i == 0 || tags[i - 1] == Tag::O) fail(ErrorKind::data, "I without preceding B at position " + std::to_string(i));
        spans.back().end = i + 1;
        break;
      case Tag::O: break;
    }
  }
  return spans;
}

/// Promotes every I that starts a run (sentence start or after O) to B.
inline std::vector<Tag> repair_bio(std::vector<Tag> tags) {
  for (std::size_t i = 0; i < tags.size(); ++i) {
    if (tags[i] == Tag::I && (i == 0 || tags[i - 1] == Tag::O)) tags[i] = Tag::B;
  }
  return tags;
}

struct SpanScore {
  std::size_t gold = 0;
  std::size_t predicted = 0;
  std::size_t matched = 0;

  double precision() const { return predicted ? static_cast<double>(matched) / static_cast<double>(predicted) : 0.0; }
  double recall() const { return gold ? static_cast<double>(matched) / static_cast<double>(gold) : 0.0; }
  double f1() const {
    const double p = precision(), r = recall();
    return p + r > 0.0 ? 2.0 * p * r / (p + r) : 0.0;
  }

  SpanScore& operator+=(const SpanScore& o) {
    gold += o.gold;
    predicted += o.predicted;
    matched += o.matched;
    return *this;
  }
};

/// Exact-match span scoring.
inline SpanScore score_spans(const std::vector<Span>& gold, const std::vector<Span>& predicted) {
  SpanScore s;
  s.gold = gold.size();
  s.predicted = predicted.size();
  for (const auto& p : predicted) {
    if (std::find(gold.begin(), gold.end(), p) != gold.end()) ++s.matched;
  }
  return s;
}

/// Enforces every Instance invariant; `where` prefixes the error message.
inline void validate(const Instance& inst, const std::string& where = "instance") {
  auto bad = [&](const std::string& field, const std::string& why) {
    fail(ErrorKind::data, where + ": field '" + field + "': " + why);
  };
  if (inst.tokens.empty()) bad("tokens", "empty token list");
  if (!(inst.aspect.start < inst.aspect.end && inst.aspect.end <= inst.tokens.size())) {
    bad("aspect_span", "span [" + std::to_string(inst.aspect.start) + "," + std::to_string(inst.aspect.end) +
                           ") out of range for " + std::to_string(inst.tokens.size()) + " tokens");
  }
  if (inst.tags.size() != inst.tokens.size()) bad("bio_tags", "length differs from tokens");
  std::vector<Span> spans;
  try {
    spans = decode_bio(inst.tags);
  } catch (const Error& e) {
    bad("bio_tags", e.what());
  }
  if (std::find(spans.begin(), spans.end(), inst.aspect) == spans.end()) {
    bad("aspect_span", "focal aspect is not one of the tagged spans");
  }
  if (inst.domain == Domain::source && !inst.polarity) bad("polarity", "source instances must be labeled");
}

}  // namespace difd::corpus
