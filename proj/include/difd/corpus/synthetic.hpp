#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <random>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "difd/corpus/bio.hpp"
#include "difd/corpus/instance.hpp"
#include "difd/error.hpp"

namespace difd::corpus {

/// Generation settings for one domain.
struct SyntheticDomain {
  std::string name;
  /// Explicit aspect phrases (space-separated tokens). When empty,
  /// `aspect_types` pseudo-words are generated.
  std::vector<std::string> aspects;
  std::size_t aspect_types = 40;
  /// Share of generated aspect types that are two tokens long.
  double multiword_rate = 0.2;
  /// Domain-only filler words; `domain_filler_rate` of filler slots use them.
  std::vector<std::string> filler;
  std::size_t filler_types = 0;
  double domain_filler_rate = 0.0;
  std::size_t min_length = 6;
  std::size_t max_length = 12;
  double two_aspect_rate = 0.3;
  /// positive, negative, neutral
  std::array<double, 3> polarity{0.4, 0.3, 0.3};
  /// Instances in the labeled split (source: train; target: unlabeled) and
  /// the held-out split (source: test; target: gold).
  std::size_t primary_count = 2000;
  std::size_t heldout_count = 400;
};

struct SyntheticSpec {
  std::uint64_t seed = 1;
  /// Fraction of target aspect types copied from the source inventory.
  double aspect_overlap = 0.0;
  std::array<std::vector<std::string>, 3> opinions{
      std::vector<std::string>{"great", "good", "excellent", "amazing", "wonderful", "fantastic", "superb", "nice", "perfect", "awesome"},
      std::vector<std::string>{"bad", "terrible", "awful", "poor", "horrible", "disappointing", "lousy", "mediocre", "dreadful", "weak"},
      std::vector<std::string>{"okay", "average", "standard", "ordinary", "usual", "typical", "regular", "moderate", "plain", "common"}};
  std::vector<std::string> filler{"the", "a", "i", "it", "was", "is", "and", "we", "they", "this", "that", "but",
                                  "with", "for", "of", "to", "in", "really", "very", "also", "had", "our", "my", "there",
                                  "so", "just", "quite", "overall", "here", "then"};
  SyntheticDomain source = named("source");
  SyntheticDomain target = named("target");

  static SyntheticDomain named(std::string name) {
    SyntheticDomain d;
    d.name = std::move(name);
    return d;
  }
};

struct SyntheticCorpora {
  std::vector<Instance> source_train;
  std::vector<Instance> source_test;
  /// Target sentences with polarity stripped, for adaptation.
  std::vector<Instance> target_unlabeled;
  /// Disjoint target sentences with gold polarity, for evaluation only.
  std::vector<Instance> target_gold;
  std::vector<std::string> source_aspect_types;
  std::vector<std::string> target_aspect_types;
};

namespace detail {

inline std::string pseudo_word(std::mt19937_64& rng, const std::string& stem) {
  static constexpr const char* kOnsets[] = {"b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z", "br", "pl", "tr", "sk"};
  static constexpr const char* kVowels[] = {"a", "e", "i", "o", "u", "ai", "ou"};
  std::uniform_int_distribution<std::size_t> onset(0, std::size(kOnsets) - 1), vowel(0, std::size(kVowels) - 1);
  std::string w = stem;
  for (int s = 0; s < 2; ++s) w += std::string(kOnsets[onset(rng)]) + kVowels[vowel(rng)];
  return w;
}

inline std::vector<std::string> split_words(const std::string& phrase) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : phrase) {
    if (c == ' ') {
      if (!cur.empty()) out.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  if (!cur.empty()) out.push_back(cur);
  return out;
}

inline void check_domain(const SyntheticDomain& d) {
  if (d.aspects.empty() && d.aspect_types == 0) fail(ErrorKind::usage, "synthetic: domain '" + d.name + "' has no aspect vocabulary");
  if (d.min_length < 1 || d.max_length < d.min_length) fail(ErrorKind::usage, "synthetic: bad length range for '" + d.name + "'");
  double total = 0.0;
  for (double p : d.polarity) {
    if (p < 0.0) fail(ErrorKind::usage, "synthetic: negative polarity proportion");
    total += p;
  }
  if (!(total > 0.0)) fail(ErrorKind::usage, "synthetic: polarity proportions sum to zero");
  if (d.domain_filler_rate > 0.0 && d.filler.empty() && d.filler_types == 0) {
    fail(ErrorKind::usage, "synthetic: domain filler rate set but no domain filler words");
  }
}

class Generator {
 public:
  Generator(const SyntheticSpec& spec, std::mt19937_64& rng, const std::vector<std::vector<std::string>>& aspects,
            const SyntheticDomain& dom, std::vector<std::string> domain_filler, Domain domain)
      : spec_(spec), rng_(rng), aspects_(aspects), dom_(dom), domain_filler_(std::move(domain_filler)), domain_(domain) {}

  std::vector<Instance> run(std::size_t count, const std::string& split, bool keep_labels) {
    std::vector<Instance> out;
    std::size_t sentence = 0;
    while (out.size() < count) {
      const bool two = aspects_.size() >= 2 && count - out.size() >= 2 && coin(dom_.two_aspect_rate);
      emit(two ? 2 : 1, dom_.name + "-" + split + "-" + std::to_string(sentence++), keep_labels, out);
    }
    return out;
  }

 private:
  bool coin(double p) { return std::bernoulli_distribution(std::clamp(p, 0.0, 1.0))(rng_); }

  template <class T>
  const T& pick(const std::vector<T>& v) {
    return v[std::uniform_int_distribution<std::size_t>(0, v.size() - 1)(rng_)];
  }

  const std::string& filler() {
    if (!domain_filler_.empty() && coin(dom_.domain_filler_rate)) return pick(domain_filler_);
    return pick(spec_.filler);
  }

  void emit(std::size_t k, const std::string& sid, bool keep_labels, std::vector<Instance>& out) {
    struct Chunk {
      std::vector<std::string> words;
      std::size_t aspect_offset = 0;
      std::size_t aspect_len = 0;
      Polarity polarity = Polarity::positive;
    };
    std::discrete_distribution<int> pol(dom_.polarity.begin(), dom_.polarity.end());
    std::vector<std::size_t> chosen;
    std::vector<Chunk> chunks;
    for (std::size_t j = 0; j < k; ++j) {
      std::size_t a = 0;
      do {
        a = std::uniform_int_distribution<std::size_t>(0, aspects_.size() - 1)(rng_);
      } while (std::find(chosen.begin(), chosen.end(), a) != chosen.end());
      chosen.push_back(a);
      Chunk c;
      c.polarity = static_cast<Polarity>(pol(rng_));
      const auto& opinion = pick(spec_.opinions[static_cast<std::size_t>(c.polarity)]);
      const bool gap = coin(0.5);
      c.aspect_len = aspects_[a].size();
      // Opinion sits before or after the aspect, at most one filler away.
      if (coin(0.5)) {
        c.words.push_back(opinion);
        if (gap) c.words.push_back(filler());
        c.aspect_offset = c.words.size();
        c.words.insert(c.words.end(), aspects_[a].begin(), aspects_[a].end());
      } else {
        c.words = aspects_[a];
        if (gap) c.words.push_back(filler());
        c.words.push_back(opinion);
      }
      chunks.push_back(std::move(c));
    }

    std::size_t used = 0;
    for (const auto& c : chunks) used += c.words.size();
    const std::size_t len = std::uniform_int_distribution<std::size_t>(dom_.min_length, dom_.max_length)(rng_);
    const std::size_t n_fill = len > used ? len - used : 0;

    // Chunk j is inserted before filler slot[j]; slots sorted so chunk order is kept.
    std::vector<std::size_t> slots;
    for (std::size_t j = 0; j < k; ++j) slots.push_back(std::uniform_int_distribution<std::size_t>(0, n_fill)(rng_));
    std::sort(slots.begin(), slots.end());

    std::vector<std::string> tokens;
    std::vector<Span> spans;
    std::size_t next = 0;
    for (std::size_t f = 0; f <= n_fill; ++f) {
      while (next < k && slots[next] == f) {
        const auto& c = chunks[next];
        spans.push_back({tokens.size() + c.aspect_offset, tokens.size() + c.aspect_offset + c.aspect_len});
        tokens.insert(tokens.end(), c.words.begin(), c.words.end());
        ++next;
      }
      if (f < n_fill) tokens.push_back(filler());
    }

    const auto tags = encode_bio(spans, tokens.size());
    for (std::size_t j = 0; j < k; ++j) {
      Instance inst;
      inst.id = sid + "#" + std::to_string(j);
      inst.sentence_id = sid;
      inst.tokens = tokens;
      inst.aspect = spans[j];
      inst.tags = tags;
      if (keep_labels) inst.polarity = chunks[j].polarity;
      inst.domain = domain_;
      out.push_back(std::move(inst));
    }
  }

  const SyntheticSpec& spec_;
  std::mt19937_64& rng_;
  const std::vector<std::vector<std::string>>& aspects_;
  const SyntheticDomain& dom_;
  std::vector<std::string> domain_filler_;
  Domain domain_;
};

}  // namespace detail

/// Two-domain corpus: shared opinion lexicon and filler, per-domain aspect
/// inventories. Every aspect's opinion word lies within two tokens of it and
/// fixes the aspect's polarity.
inline SyntheticCorpora generate_synthetic(const SyntheticSpec& spec) {
  for (const auto& lex : spec.opinions) {
    if (lex.empty()) fail(ErrorKind::usage, "synthetic: empty opinion lexicon");
  }
  if (spec.filler.empty()) fail(ErrorKind::usage, "synthetic: empty filler vocabulary");
  if (spec.aspect_overlap < 0.0 || spec.aspect_overlap > 1.0) fail(ErrorKind::usage, "synthetic: aspect_overlap must be in [0,1]");
  detail::check_domain(spec.source);
  detail::check_domain(spec.target);

  std::mt19937_64 rng(spec.seed);

  std::set<std::string> reserved(spec.filler.begin(), spec.filler.end());
  for (const auto& lex : spec.opinions) reserved.insert(lex.begin(), lex.end());

  auto inventory = [&](const SyntheticDomain& d, const std::string& stem) {
    std::vector<std::vector<std::string>> out;
    if (!d.aspects.empty()) {
      for (const auto& a : d.aspects) {
        auto words = detail::split_words(a);
        if (words.empty()) fail(ErrorKind::usage, "synthetic: empty aspect phrase");
        out.push_back(std::move(words));
      }
      return out;
    }
    while (out.size() < d.aspect_types) {
      std::vector<std::string> phrase{detail::pseudo_word(rng, stem)};
      if (std::bernoulli_distribution(d.multiword_rate)(rng)) phrase.push_back(detail::pseudo_word(rng, stem));
      bool clash = false;
      for (const auto& w : phrase) clash = clash || reserved.count(w);
      if (clash || std::find(out.begin(), out.end(), phrase) != out.end()) continue;
      for (const auto& w : phrase) reserved.insert(w);
      out.push_back(std::move(phrase));
    }
    return out;
  };
  auto domain_filler = [&](const SyntheticDomain& d, const std::string& stem) {
    std::vector<std::string> out = d.filler;
    while (d.filler.empty() && out.size() < d.filler_types) {
      auto w = detail::pseudo_word(rng, stem);
      if (reserved.count(w)) continue;
      reserved.insert(w);
      out.push_back(std::move(w));
    }
    return out;
  };

  const auto src_aspects = inventory(spec.source, "s");
  auto tgt_aspects = inventory(spec.target, "t");
  const auto n_shared = static_cast<std::size_t>(std::llround(spec.aspect_overlap * static_cast<double>(tgt_aspects.size())));
  for (std::size_t i = 0; i < n_shared && i < src_aspects.size(); ++i) tgt_aspects[i] = src_aspects[i];
  const auto src_filler = domain_filler(spec.source, "sf");
  const auto tgt_filler = domain_filler(spec.target, "tf");

  SyntheticCorpora out;
  auto join = [](const std::vector<std::string>& words) {
    std::string s;
    for (const auto& w : words) s += (s.empty() ? "" : " ") + w;
    return s;
  };
  for (const auto& a : src_aspects) out.source_aspect_types.push_back(join(a));
  for (const auto& a : tgt_aspects) out.target_aspect_types.push_back(join(a));

  detail::Generator src(spec, rng, src_aspects, spec.source, src_filler, Domain::source);
  out.source_train = src.run(spec.source.primary_count, "train", true);
  out.source_test = src.run(spec.source.heldout_count, "test", true);
  detail::Generator tgt(spec, rng, tgt_aspects, spec.target, tgt_filler, Domain::target);
  out.target_unlabeled = tgt.run(spec.target.primary_count, "unlabeled", false);
  out.target_gold = tgt.run(spec.target.heldout_count, "gold", true);
  return out;
}

// JSON spec reading. Every field is optional and defaults as above.

inline SyntheticDomain domain_from_json(const nlohmann::json& j, SyntheticDomain d) {
  d.name = j.value("name", d.name);
  d.aspects = j.value("aspects", d.aspects);
  d.aspect_types = j.value("aspect_types", d.aspect_types);
  d.multiword_rate = j.value("multiword_rate", d.multiword_rate);
  d.filler = j.value("filler", d.filler);
  d.filler_types = j.value("filler_types", d.filler_types);
  d.domain_filler_rate = j.value("domain_filler_rate", d.domain_filler_rate);
  d.min_length = j.value("min_length", d.min_length);
  d.max_length = j.value("max_length", d.max_length);
  d.two_aspect_rate = j.value("two_aspect_rate", d.two_aspect_rate);
  if (j.contains("polarity")) {
    const auto& p = j["polarity"];
    d.polarity = {p.value("positive", 0.0), p.value("negative", 0.0), p.value("neutral", 0.0)};
  }
  d.primary_count = j.value("primary_count", d.primary_count);
  d.heldout_count = j.value("heldout_count", d.heldout_count);
  return d;
}

inline SyntheticSpec synthetic_spec_from_json(const nlohmann::json& j) {
  static const std::set<std::string> known{"seed", "aspect_overlap", "opinions", "filler", "source", "target"};
  for (const auto& [key, _] : j.items()) {
    if (!known.count(key)) fail(ErrorKind::usage, "synthetic spec: unknown key '" + key + "'");
  }
  SyntheticSpec s;
  try {
    s.seed = j.value("seed", s.seed);
    s.aspect_overlap = j.value("aspect_overlap", s.aspect_overlap);
    if (j.contains("opinions")) {
      const auto& o = j["opinions"];
      s.opinions[0] = o.value("positive", s.opinions[0]);
      s.opinions[1] = o.value("negative", s.opinions[1]);
      s.opinions[2] = o.value("neutral", s.opinions[2]);
    }
    s.filler = j.value("filler", s.filler);
    if (j.contains("source")) s.source = domain_from_json(j["source"], s.source);
    if (j.contains("target")) s.target = domain_from_json(j["target"], s.target);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::usage, std::string("synthetic spec: ") + e.what());
  }
  return s;
}

inline nlohmann::ordered_json to_json(const SyntheticDomain& d) {
  return {{"name", d.name},
          {"aspects", d.aspects},
          {"aspect_types", d.aspect_types},
          {"multiword_rate", d.multiword_rate},
          {"filler", d.filler},
          {"filler_types", d.filler_types},
          {"domain_filler_rate", d.domain_filler_rate},
          {"min_length", d.min_length},
          {"max_length", d.max_length},
          {"two_aspect_rate", d.two_aspect_rate},
          {"polarity", {{"positive", d.polarity[0]}, {"negative", d.polarity[1]}, {"neutral", d.polarity[2]}}},
          {"primary_count", d.primary_count},
          {"heldout_count", d.heldout_count}};
}

inline nlohmann::ordered_json to_json(const SyntheticSpec& s) {
  return {{"seed", s.seed},
          {"aspect_overlap", s.aspect_overlap},
          {"opinions", {{"positive", s.opinions[0]}, {"negative", s.opinions[1]}, {"neutral", s.opinions[2]}}},
          {"filler", s.filler},
          {"source", to_json(s.source)},
          {"target", to_json(s.target)}};
}

}  // namespace difd::corpus
