#pragma once

#include <cmath>
#include <random>
#include <string>

#include "difd/model/asc_head.hpp"

namespace difd::model {

/// Hidden [2h, 2h] + ReLU, output [2, 2h]; all in the domain-classifier partition.
inline void init_domain_classifier(nd::ParamStore& store, std::size_t d_h, std::mt19937_64& rng) {
  const std::size_t d = 2 * d_h;
  const double bound = 1.0 / std::sqrt(static_cast<double>(d));
  add_uniform(store, "domain.hidden.w", nd::Shape{d, d}, bound, rng, nd::Partition::domain_classifier);
  store.add("domain.hidden.b", nd::Tensor(nd::Shape{d}, 0.0), nd::Partition::domain_classifier);
  add_uniform(store, "domain.out.w", nd::Shape{2, d}, bound, rng, nd::Partition::domain_classifier);
  store.add("domain.out.b", nd::Tensor(nd::Shape{2}, 0.0), nd::Partition::domain_classifier);
}

/// [N, 2] domain logits.
inline nd::Value domain_logits(nd::Tape& tape, nd::ParamStore& store, nd::Value f) {
  auto hidden = nd::relu(nd::add(nd::matmul_nt(f, tape.param(store, "domain.hidden.w")), tape.param(store, "domain.hidden.b")));
  return nd::add(nd::matmul_nt(hidden, tape.param(store, "domain.out.w")), tape.param(store, "domain.out.b"));
}

namespace detail {

inline void require_both(const nd::Value& f_s, const nd::Value& f_t, const char* what) {
  if (f_s.size() == 0 || f_t.size() == 0) fail(ErrorKind::data, std::string(what) + ": empty domain side");
  if (f_s.cols() != f_t.cols()) fail(ErrorKind::shape, std::string(what) + ": feature widths differ");
}

/// Cross-entropy averaged within each domain, then summed. Source rows are
/// labeled `source_label`, target rows the other class.
inline nd::Value domain_loss(nd::Tape& tape, nd::ParamStore& store, nd::Value f_s, nd::Value f_t, std::size_t source_label) {
  require_both(f_s, f_t, "domain_loss");
  const nd::Value parts[] = {f_s, f_t};
  auto logits = domain_logits(tape, store, nd::concat_rows(parts));
  const std::size_t ns = f_s.rows(), nt = f_t.rows();
  nd::Tensor w(nd::Shape{ns + nt, 2}, 0.0);
  for (std::size_t r = 0; r < ns; ++r) w(r, source_label) = 1.0 / static_cast<double>(ns);
  for (std::size_t r = 0; r < nt; ++r) w(ns + r, 1 - source_label) = 1.0 / static_cast<double>(nt);
  return weighted_nll(logits, std::move(w));
}

inline nd::Value column_mean(nd::Tape& tape, nd::Value f) {
  return nd::matmul(tape.constant(nd::Tensor(nd::Shape{1, f.rows()}, 1.0 / static_cast<double>(f.rows()))), f);
}

inline nd::Value covariance(nd::Tape& tape, nd::Value f) {
  const std::size_t d = f.cols();
  if (f.rows() < 2) return tape.constant(nd::Tensor(nd::Shape{d, d}, 0.0));
  auto centered = nd::sub(f, column_mean(tape, f));
  return nd::scalar_mul(nd::matmul(nd::transpose(centered), centered), 1.0 / static_cast<double>(f.rows() - 1));
}

}  // namespace detail

/// Domain classifier loss with the true labels (source = 0, target = 1).
inline nd::Value domain_loss_true(nd::Tape& tape, nd::ParamStore& store, nd::Value f_s, nd::Value f_t) {
  return detail::domain_loss(tape, store, f_s, f_t, 0);
}

/// Same loss with the two domains' labels swapped.
inline nd::Value domain_loss_flipped(nd::Tape& tape, nd::ParamStore& store, nd::Value f_s, nd::Value f_t) {
  return detail::domain_loss(tape, store, f_s, f_t, 1);
}

/// Squared distance between the two domains' mean feature vectors.
inline nd::Value mmd_loss(nd::Tape& tape, nd::Value f_s, nd::Value f_t) {
  detail::require_both(f_s, f_t, "mmd_loss");
  auto diff = nd::sub(detail::column_mean(tape, f_s), detail::column_mean(tape, f_t));
  return nd::sum(nd::mul(diff, diff));
}

/// ||C_s - C_t||_F^2 / (4 d^2) with sample covariances.
inline nd::Value coral_loss(nd::Tape& tape, nd::Value f_s, nd::Value f_t) {
  detail::require_both(f_s, f_t, "coral_loss");
  const double d = static_cast<double>(f_s.cols());
  auto diff = nd::sub(detail::covariance(tape, f_s), detail::covariance(tape, f_t));
  return nd::scalar_mul(nd::sum(nd::mul(diff, diff)), 1.0 / (4.0 * d * d));
}

}  // namespace difd::model
