#pragma once

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "difd/corpus/instance.hpp"
#include "difd/corpus/vocab.hpp"
#include "difd/error.hpp"

namespace difd::corpus {

/// Padded mini-batch. Per-token arrays are row-major size x length, row b
/// holding instance b. Padding positions have mask 0, token id kPad, tag O.
struct Batch {
  std::size_t size = 0;
  std::size_t length = 0;
  std::vector<std::size_t> token_ids;
  std::vector<double> mask;
  /// 1 on the focal aspect's positions (the aspect position vector x^a).
  std::vector<double> aspect_indicator;
  std::vector<Tag> tags;
  std::vector<std::optional<Polarity>> polarity;
  std::vector<Domain> domains;
  std::vector<std::size_t> lengths;
  std::vector<std::size_t> instance_index;
  std::vector<std::string> sentence_ids;

  std::size_t at(std::size_t b, std::size_t t) const { return b * length + t; }

  bool fully_labeled() const {
    return std::all_of(polarity.begin(), polarity.end(), [](const auto& p) { return p.has_value(); });
  }

  std::size_t real_tokens() const { return std::accumulate(lengths.begin(), lengths.end(), std::size_t{0}); }
};

inline Batch make_batch(const std::vector<Instance>& instances, std::span<const std::size_t> indices, const Vocabulary& vocab) {
  if (indices.empty()) fail(ErrorKind::usage, "make_batch: no instances");
  Batch b;
  b.size = indices.size();
  for (auto i : indices) b.length = std::max(b.length, instances.at(i).tokens.size());
  const std::size_t cells = b.size * b.length;
  b.token_ids.assign(cells, Vocabulary::kPad);
  b.mask.assign(cells, 0.0);
  b.aspect_indicator.assign(cells, 0.0);
  b.tags.assign(cells, Tag::O);
  for (std::size_t row = 0; row < indices.size(); ++row) {
    const auto& inst = instances[indices[row]];
    for (std::size_t t = 0; t < inst.tokens.size(); ++t) {
      b.token_ids[b.at(row, t)] = vocab.id(inst.tokens[t]);
      b.mask[b.at(row, t)] = 1.0;
      b.tags[b.at(row, t)] = inst.tags[t];
    }
    for (std::size_t t = inst.aspect.start; t < inst.aspect.end; ++t) b.aspect_indicator[b.at(row, t)] = 1.0;
    b.polarity.push_back(inst.polarity);
    b.domains.push_back(inst.domain);
    b.lengths.push_back(inst.tokens.size());
    b.instance_index.push_back(indices[row]);
    b.sentence_ids.push_back(inst.sentence_id);
  }
  return b;
}

/// Splits the corpus into batches of at most batch_size, keeping the final
/// partial batch. With shuffle, order is a pure function of the seed.
inline std::vector<Batch> make_batches(const std::vector<Instance>& instances, const Vocabulary& vocab,
                                       std::size_t batch_size, std::uint64_t seed, bool shuffle) {
  if (instances.empty()) fail(ErrorKind::data, "make_batches: empty instance list");
  if (batch_size == 0) fail(ErrorKind::usage, "make_batches: batch_size must be >= 1");
  std::vector<std::size_t> order(instances.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  if (shuffle) {
    std::mt19937_64 rng(seed);
    std::shuffle(order.begin(), order.end(), rng);
  }
  std::vector<Batch> batches;
  for (std::size_t begin = 0; begin < order.size(); begin += batch_size) {
    const std::size_t end = std::min(order.size(), begin + batch_size);
    batches.push_back(make_batch(instances, std::span<const std::size_t>(order).subspan(begin, end - begin), vocab));
  }
  return batches;
}

}  // namespace difd::corpus
