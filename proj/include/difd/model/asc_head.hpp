#pragma once

#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "difd/corpus/batch.hpp"
#include "difd/model/encoder.hpp"

namespace difd::model {

enum class AspectPooling { sum, mean };

inline void init_asc(nd::ParamStore& store, std::size_t d_h, std::mt19937_64& rng) {
  const std::size_t d = 2 * d_h;
  const double bound = 1.0 / std::sqrt(static_cast<double>(d));
  add_uniform(store, "asc.w_p", nd::Shape{d, d}, bound, rng, nd::Partition::feature_extractor);
  store.add("asc.b_p", nd::Tensor(nd::Shape{1}, 1.0), nd::Partition::feature_extractor);
  add_uniform(store, "asc.classifier.w", nd::Shape{corpus::kNumPolarities, d}, bound, rng, nd::Partition::feature_extractor);
  store.add("asc.classifier.b", nd::Tensor(nd::Shape{corpus::kNumPolarities}, 0.0), nd::Partition::feature_extractor);
}

/// h^a = sum (or mean) of H^c rows under the aspect indicator. [B, 2h]
inline nd::Value aspect_position_rep(nd::Tape& tape, nd::Value hc, const corpus::Batch& batch,
                                     AspectPooling pooling = AspectPooling::sum) {
  nd::Tensor s(nd::Shape{batch.size, batch.size * batch.length}, 0.0);
  for (std::size_t b = 0; b < batch.size; ++b) {
    double count = 0.0;
    for (std::size_t t = 0; t < batch.length; ++t) count += batch.aspect_indicator[batch.at(b, t)];
    if (count == 0.0) fail(ErrorKind::data, "aspect_position_rep: empty aspect indicator in row " + std::to_string(b));
    const double w = pooling == AspectPooling::mean ? 1.0 / count : 1.0;
    for (std::size_t t = 0; t < batch.length; ++t) s(b, batch.at(b, t)) = batch.aspect_indicator[batch.at(b, t)] * w;
  }
  return nd::matmul(tape.constant(std::move(s)), hc);
}

struct Attention {
  nd::Value gamma;  // [B*n, 1], zero at padding
  nd::Value f;      // [B, 2h]
};

/// gamma_i = tanh(h_i^c W_p h^a + b_p); f = sum_i gamma_i h_i^c. With
/// length_normalize, f is divided by the sentence length.
inline Attention aspect_opinion_attention(nd::Tape& tape, nd::ParamStore& store, nd::Value hc, nd::Value ha,
                                          const corpus::Batch& batch, bool length_normalize = false) {
  auto w_p = tape.param(store, "asc.w_p");
  auto b_p = tape.param(store, "asc.b_p");
  std::vector<std::size_t> owner(batch.size * batch.length);
  for (std::size_t b = 0; b < batch.size; ++b) {
    for (std::size_t t = 0; t < batch.length; ++t) owner[batch.at(b, t)] = b;
  }
  auto query = nd::row_gather(nd::matmul_nt(ha, w_p), std::move(owner));  // row b*n+t holds W_p h^a_b
  auto scores = nd::add(nd::sum_lastdim(nd::mul(hc, query)), b_p);
  auto gamma = nd::mul(nd::tanh(scores), tape.constant(mask_column(batch)));

  nd::Tensor seg(nd::Shape{batch.size, batch.size * batch.length}, 0.0);
  for (std::size_t b = 0; b < batch.size; ++b) {
    const double w = length_normalize ? 1.0 / static_cast<double>(batch.lengths[b]) : 1.0;
    for (std::size_t t = 0; t < batch.lengths[b]; ++t) seg(b, batch.at(b, t)) = w;
  }
  auto f = nd::matmul(tape.constant(std::move(seg)), nd::mul(hc, gamma));
  return {gamma, f};
}

/// [B, 3] sentiment logits.
inline nd::Value sentiment_logits(nd::Tape& tape, nd::ParamStore& store, nd::Value f) {
  return nd::add(nd::matmul_nt(f, tape.param(store, "asc.classifier.w")), tape.param(store, "asc.classifier.b"));
}

/// Weighted negative log-likelihood: -sum_{r,c} weights[r,c] * log_softmax(logits)[r,c].
inline nd::Value weighted_nll(nd::Value logits, nd::Tensor weights) {
  auto& tape = logits.tape();
  return nd::scalar_mul(nd::sum(nd::mul(nd::log_softmax(logits), tape.constant(std::move(weights)))), -1.0);
}

/// Mean cross-entropy over the batch at the gold polarities.
inline nd::Value sentiment_loss(nd::Value logits, const std::vector<std::optional<corpus::Polarity>>& labels) {
  if (labels.size() != logits.rows()) fail(ErrorKind::shape, "sentiment_loss: label count does not match logits");
  nd::Tensor w(nd::Shape{labels.size(), corpus::kNumPolarities}, 0.0);
  for (std::size_t r = 0; r < labels.size(); ++r) {
    if (!labels[r]) fail(ErrorKind::data, "sentiment_loss: unlabeled instance in batch");
    w(r, static_cast<std::size_t>(*labels[r])) = 1.0 / static_cast<double>(labels.size());
  }
  return weighted_nll(logits, std::move(w));
}

/// Index of the largest entry; ties go to the lowest index.
inline std::size_t argmax(std::span<const double> row) {
  std::size_t best = 0;
  for (std::size_t c = 1; c < row.size(); ++c) {
    if (row[c] > row[best]) best = c;
  }
  return best;
}

inline std::vector<corpus::Polarity> predict(const nd::Tensor& logits) {
  std::vector<corpus::Polarity> out;
  for (std::size_t r = 0; r < logits.rows(); ++r) {
    out.push_back(static_cast<corpus::Polarity>(argmax(std::span<const double>(logits.data).subspan(r * logits.cols(), logits.cols()))));
  }
  return out;
}

}  // namespace difd::model
