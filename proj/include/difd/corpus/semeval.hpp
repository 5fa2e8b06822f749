#pragma once

#include <algorithm>
#include <array>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <boost/property_tree/ptree.hpp>
#include <boost/property_tree/xml_parser.hpp>

#include "difd/corpus/bio.hpp"
#include "difd/corpus/instance.hpp"
#include "difd/corpus/tokenizer.hpp"
#include "difd/error.hpp"

namespace difd::corpus {

struct LoadStats {
  std::size_t sentences = 0;
  std::size_t sentences_without_aspects = 0;
  std::size_t aspect_terms = 0;
  std::size_t dropped_conflict = 0;
  std::size_t dropped_overlap = 0;
  std::array<std::size_t, kNumPolarities> per_polarity{};

  std::size_t instances() const { return per_polarity[0] + per_polarity[1] + per_polarity[2]; }
};

struct LoadResult {
  std::vector<Instance> instances;
  LoadStats stats;
};

namespace detail {

struct RawAspect {
  std::size_t from = 0;  // code points
  std::size_t to = 0;
  std::string polarity;
};

/// Tokenizes one annotated sentence and emits one Instance per usable aspect.
inline void emit_sentence(const std::string& sentence_id, const std::string& text, const std::vector<RawAspect>& aspects,
                          Domain domain, LoadResult& result) {
  ++result.stats.sentences;
  if (aspects.empty()) {
    ++result.stats.sentences_without_aspects;
    return;
  }
  const auto cp = codepoint_byte_offsets(text);
  auto to_byte = [&](std::size_t c) {
    if (c >= cp.size()) fail(ErrorKind::data, "sentence " + sentence_id + ": aspect offset " + std::to_string(c) + " past end of text");
    return cp[c];
  };

  std::vector<std::size_t> breaks;
  for (const auto& a : aspects) {
    breaks.push_back(to_byte(a.from));
    breaks.push_back(to_byte(a.to));
  }
  const auto tokens = tokenize(text, breaks);
  if (tokens.empty()) fail(ErrorKind::data, "sentence " + sentence_id + ": no tokens");

  // Character range -> covering token span.
  std::vector<Span> spans;
  for (const auto& a : aspects) {
    const std::size_t b = to_byte(a.from), e = to_byte(a.to);
    std::size_t first = tokens.size(), last = 0;
    for (std::size_t k = 0; k < tokens.size(); ++k) {
      if (tokens[k].end > b && tokens[k].begin < e) {
        first = std::min(first, k);
        last = std::max(last, k + 1);
      }
    }
    if (first >= last) fail(ErrorKind::data, "sentence " + sentence_id + ": aspect covers no token");
    spans.push_back({first, last});
  }

  // Tags cover all aspect terms (conflict ones included). Repeated spans are
  // merged; of overlapping distinct spans the earlier one is kept.
  std::vector<Span> sorted = spans;
  std::sort(sorted.begin(), sorted.end());
  sorted.erase(std::unique(sorted.begin(), sorted.end()), sorted.end());
  std::vector<Span> tagged;
  for (const auto& s : sorted) {
    if (tagged.empty() || s.start >= tagged.back().end) tagged.push_back(s);
  }
  const auto tags = encode_bio(tagged, tokens.size());

  std::vector<std::string> words;
  for (const auto& t : tokens) words.push_back(t.text);

  for (std::size_t k = 0; k < aspects.size(); ++k) {
    ++result.stats.aspect_terms;
    const auto pol = polarity_from_string(aspects[k].polarity);
    if (!pol) {
      ++result.stats.dropped_conflict;
      continue;
    }
    if (std::find(tagged.begin(), tagged.end(), spans[k]) == tagged.end()) {
      ++result.stats.dropped_overlap;
      continue;
    }
    Instance inst;
    inst.id = sentence_id + "#" + std::to_string(k);
    inst.sentence_id = sentence_id;
    inst.tokens = words;
    inst.aspect = spans[k];
    inst.tags = tags;
    inst.polarity = pol;
    inst.domain = domain;
    ++result.stats.per_polarity[static_cast<std::size_t>(*pol)];
    result.instances.push_back(std::move(inst));
  }
}

}  // namespace detail

/// SemEval-2014 task 4 aspect-term XML: `<sentence id>` elements holding
/// `<text>` and `<aspectTerms><aspectTerm term polarity from to/>`.
/// "conflict" polarities are dropped and counted.
inline LoadResult load_semeval_xml(const std::filesystem::path& path, Domain domain = Domain::source) {
  namespace pt = boost::property_tree;
  pt::ptree tree;
  try {
    pt::read_xml(path.string(), tree);
  } catch (const pt::xml_parser_error& e) {
    fail(ErrorKind::data, path.string() + ":" + std::to_string(e.line()) + ": " + e.message());
  }

  LoadResult result;
  const auto root = tree.get_child_optional("sentences");
  if (!root) fail(ErrorKind::data, path.string() + ": missing <sentences> root");
  for (const auto& [tag, sentence] : *root) {
    if (tag != "sentence") continue;
    const std::string id = sentence.get<std::string>("<xmlattr>.id", std::to_string(result.stats.sentences));
    const std::string text = sentence.get<std::string>("text", "");
    std::vector<detail::RawAspect> aspects;
    if (const auto terms = sentence.get_child_optional("aspectTerms")) {
      for (const auto& [ttag, term] : *terms) {
        if (ttag != "aspectTerm") continue;
        try {
          aspects.push_back({term.get<std::size_t>("<xmlattr>.from"), term.get<std::size_t>("<xmlattr>.to"),
                             term.get<std::string>("<xmlattr>.polarity", "")});
        } catch (const pt::ptree_error& e) {
          fail(ErrorKind::data, path.string() + ": sentence " + id + ": " + e.what());
        }
      }
    }
    detail::emit_sentence(id, text, aspects, domain, result);
  }
  return result;
}

}  // namespace difd::corpus
