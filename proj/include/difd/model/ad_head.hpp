#pragma once

#include <array>
#include <cmath>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "difd/corpus/batch.hpp"
#include "difd/corpus/bio.hpp"
#include "difd/model/asc_head.hpp"

namespace difd::model {

inline std::string ad_prefix(corpus::Domain d) { return d == corpus::Domain::source ? "ad.source" : "ad.target"; }

inline void init_ad(nd::ParamStore& store, corpus::Domain domain, std::size_t d_h, std::mt19937_64& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(2 * d_h));
  add_uniform(store, ad_prefix(domain) + ".w", nd::Shape{corpus::kNumTags, 2 * d_h}, bound, rng, nd::Partition::feature_extractor);
  store.add(ad_prefix(domain) + ".b", nd::Tensor(nd::Shape{corpus::kNumTags}, 0.0), nd::Partition::feature_extractor);
}

/// Indexed by Tag (B, I, O).
using LabelWeights = std::array<double, corpus::kNumTags>;

/// lambda_l = T / (K * c_l) over unmasked tokens, where K counts the labels
/// present; absent labels get 0.
inline LabelWeights compute_label_weights(const std::vector<corpus::Tag>& tags, const std::vector<double>& mask) {
  if (tags.size() != mask.size()) fail(ErrorKind::shape, "compute_label_weights: tags and mask differ in length");
  std::array<double, corpus::kNumTags> count{};
  double total = 0.0;
  for (std::size_t i = 0; i < tags.size(); ++i) {
    if (mask[i] == 0.0) continue;
    count[static_cast<std::size_t>(tags[i])] += 1.0;
    total += 1.0;
  }
  if (total == 0.0) fail(ErrorKind::data, "compute_label_weights: all tokens masked");
  double present = 0.0;
  for (double c : count) present += c > 0.0 ? 1.0 : 0.0;
  LabelWeights w{};
  for (std::size_t l = 0; l < corpus::kNumTags; ++l) w[l] = count[l] > 0.0 ? total / (present * count[l]) : 0.0;
  return w;
}

/// Rows of the batch that are the first occurrence of their sentence.
inline std::vector<std::size_t> unique_sentence_rows(const corpus::Batch& batch) {
  std::set<std::string> seen;
  std::vector<std::size_t> rows;
  for (std::size_t b = 0; b < batch.size; ++b) {
    if (seen.insert(batch.sentence_ids[b]).second) rows.push_back(b);
  }
  return rows;
}

/// [B*n, 3] tag logits from the domain's tagger.
inline nd::Value tag_logits(nd::Tape& tape, nd::ParamStore& store, nd::Value hd, corpus::Domain domain) {
  const auto p = ad_prefix(domain);
  return nd::add(nd::matmul_nt(hd, tape.param(store, p + ".w")), tape.param(store, p + ".b"));
}

/// Per-token loss weights: lambda_gold / (n_real * sentences) on the first row
/// of each distinct sentence, zero elsewhere. Weights are computed over the
/// same deduplicated tokens.
inline nd::Tensor ad_loss_weights(const corpus::Batch& batch) {
  const auto rows = unique_sentence_rows(batch);
  std::vector<corpus::Tag> tags;
  std::vector<double> mask;
  for (auto b : rows) {
    for (std::size_t t = 0; t < batch.length; ++t) {
      tags.push_back(batch.tags[batch.at(b, t)]);
      mask.push_back(batch.mask[batch.at(b, t)]);
    }
  }
  const auto lambda = compute_label_weights(tags, mask);
  nd::Tensor w(nd::Shape{batch.size * batch.length, corpus::kNumTags}, 0.0);
  const double sentences = static_cast<double>(rows.size());
  for (auto b : rows) {
    const double n_real = static_cast<double>(batch.lengths[b]);
    for (std::size_t t = 0; t < batch.lengths[b]; ++t) {
      const auto gold = static_cast<std::size_t>(batch.tags[batch.at(b, t)]);
      w(batch.at(b, t), gold) = lambda[gold] / (n_real * sentences);
    }
  }
  return w;
}

/// Mean over distinct sentences of the per-sentence mean of label-weighted
/// token cross-entropy.
inline nd::Value ad_loss(nd::Tape& tape, nd::ParamStore& store, nd::Value hd, const corpus::Batch& batch, corpus::Domain domain) {
  return weighted_nll(tag_logits(tape, store, hd, domain), ad_loss_weights(batch));
}

/// Per-row argmax tags (padding excluded), repaired so that an orphan I
/// starts a span.
inline std::vector<std::vector<corpus::Tag>> decode_tags(const nd::Tensor& logits, const corpus::Batch& batch) {
  std::vector<std::vector<corpus::Tag>> out(batch.size);
  for (std::size_t b = 0; b < batch.size; ++b) {
    for (std::size_t t = 0; t < batch.lengths[b]; ++t) {
      const std::size_t r = batch.at(b, t);
      out[b].push_back(static_cast<corpus::Tag>(argmax(std::span<const double>(logits.data).subspan(r * corpus::kNumTags, corpus::kNumTags))));
    }
    out[b] = corpus::repair_bio(std::move(out[b]));
  }
  return out;
}

inline std::vector<std::vector<corpus::Span>> decode_spans(const nd::Tensor& logits, const corpus::Batch& batch) {
  std::vector<std::vector<corpus::Span>> out;
  for (const auto& tags : decode_tags(logits, batch)) out.push_back(corpus::decode_bio(tags));
  return out;
}

}  // namespace difd::model
