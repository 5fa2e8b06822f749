#pragma once

#include <array>
#include <map>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "difd/corpus/instance.hpp"
#include "difd/corpus/semeval.hpp"

namespace difd::corpus {

struct SplitStats {
  std::size_t instances = 0;
  std::size_t sentences = 0;
  std::size_t unlabeled = 0;
  std::array<std::size_t, kNumPolarities> per_polarity{};
};

inline std::string aspect_text(const Instance& inst) {
  std::string s;
  for (std::size_t t = inst.aspect.start; t < inst.aspect.end; ++t) s += (s.empty() ? "" : " ") + inst.tokens[t];
  return s;
}

inline std::set<std::string> aspect_types(const std::vector<Instance>& instances) {
  std::set<std::string> out;
  for (const auto& inst : instances) out.insert(aspect_text(inst));
  return out;
}

inline SplitStats split_stats(const std::vector<Instance>& instances) {
  SplitStats s;
  std::set<std::string> sentences;
  for (const auto& inst : instances) {
    ++s.instances;
    sentences.insert(inst.sentence_id);
    if (inst.polarity) ++s.per_polarity[static_cast<std::size_t>(*inst.polarity)];
    else ++s.unlabeled;
  }
  s.sentences = sentences.size();
  return s;
}

/// |A ∩ B| / |B|, in percent. 0 when B is empty.
inline double overlap_percent(const std::set<std::string>& a, const std::set<std::string>& b) {
  if (b.empty()) return 0.0;
  std::size_t shared = 0;
  for (const auto& x : b) shared += a.count(x);
  return 100.0 * static_cast<double>(shared) / static_cast<double>(b.size());
}

inline nlohmann::ordered_json to_json(const SplitStats& s) {
  return {{"instances", s.instances},
          {"sentences", s.sentences},
          {"unlabeled", s.unlabeled},
          {"positive", s.per_polarity[0]},
          {"negative", s.per_polarity[1]},
          {"neutral", s.per_polarity[2]}};
}

inline nlohmann::ordered_json to_json(const LoadStats& s) {
  return {{"sentences", s.sentences},
          {"sentences_without_aspects", s.sentences_without_aspects},
          {"aspect_terms", s.aspect_terms},
          {"dropped_conflict", s.dropped_conflict},
          {"dropped_overlap", s.dropped_overlap},
          {"positive", s.per_polarity[0]},
          {"negative", s.per_polarity[1]},
          {"neutral", s.per_polarity[2]},
          {"instances", s.instances()}};
}

/// Counts per named split, and aspect-type overlap of the target-domain splits
/// with the source-domain splits.
inline nlohmann::ordered_json corpus_stats(const std::map<std::string, const std::vector<Instance>*>& splits) {
  nlohmann::ordered_json out;
  std::vector<Instance> source, target;
  for (const auto& [name, insts] : splits) {
    out["splits"][name] = to_json(split_stats(*insts));
    for (const auto& inst : *insts) (inst.domain == Domain::source ? source : target).push_back(inst);
  }
  const auto src = aspect_types(source), tgt = aspect_types(target);
  out["aspect_types"] = {{"source", src.size()}, {"target", tgt.size()}};
  out["aspect_overlap_percent"] = {{"target_in_source", overlap_percent(src, tgt)},
                                   {"source_in_target", overlap_percent(tgt, src)}};
  return out;
}

}  // namespace difd::corpus
