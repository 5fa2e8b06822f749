#pragma once

#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "difd/difd.hpp"

namespace toy {

using namespace difd;

inline std::vector<std::string> words(const std::string& s) {
  std::istringstream in(s);
  std::vector<std::string> out;
  for (std::string w; in >> w;) out.push_back(w);
  return out;
}

/// One instance whose tags mark only the focal aspect.
inline corpus::Instance instance(const std::string& id, const std::string& sentence_id, const std::string& text,
                                 std::size_t start, std::size_t end, std::optional<corpus::Polarity> polarity,
                                 corpus::Domain domain = corpus::Domain::source) {
  corpus::Instance inst;
  inst.id = id;
  inst.sentence_id = sentence_id;
  inst.tokens = words(text);
  inst.aspect = {start, end};
  inst.tags = corpus::encode_bio({inst.aspect}, inst.tokens.size());
  inst.polarity = polarity;
  inst.domain = domain;
  return inst;
}

/// Two source and two target instances of at most five tokens.
inline std::vector<corpus::Instance> source_pair() {
  using P = corpus::Polarity;
  return {instance("s1", "s1", "the pizza was great", 1, 2, P::positive),
          instance("s2", "s2", "awful slow service here today", 1, 3, P::negative)};
}

inline std::vector<corpus::Instance> target_pair() {
  return {instance("t1", "t1", "battery life is fine", 0, 2, std::nullopt, corpus::Domain::target),
          instance("t2", "t2", "screen bad", 0, 1, std::nullopt, corpus::Domain::target)};
}

inline model::Model make_model(const model::ModelConfig& cfg, const std::vector<corpus::Instance>& instances,
                               std::uint64_t seed = 7) {
  auto init = corpus::build_vocab_and_embeddings(instances, std::nullopt, cfg.d_e, seed);
  model::Model m;
  m.config = cfg;
  m.vocab = init.vocab;
  std::mt19937_64 rng(seed);
  model::init_model(m.store, cfg, std::move(init.table), rng);
  return m;
}

inline corpus::Batch batch(const std::vector<corpus::Instance>& instances, const corpus::Vocabulary& vocab) {
  std::vector<std::size_t> idx(instances.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  return corpus::make_batch(instances, idx, vocab);
}

inline ndgrad::Tensor random_tensor(std::mt19937_64& rng, ndgrad::Shape shape, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> dist(lo, hi);
  ndgrad::Tensor t(std::move(shape));
  for (auto& x : t.data) x = dist(rng);
  return t;
}

/// Overwrites every unfrozen parameter with uniform draws in [-scale, scale].
inline void scramble(ndgrad::ParamStore& store, std::mt19937_64& rng, double scale = 0.5) {
  std::uniform_real_distribution<double> dist(-scale, scale);
  for (auto& p : store) {
    std::vector<char> frozen(p.value.rows(), 0);
    for (auto r : p.frozen_rows) frozen[r] = 1;
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      if (!frozen[i / p.value.cols()]) p.value.data[i] = dist(rng);
    }
  }
}

}  // namespace toy
