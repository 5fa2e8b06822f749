#pragma once

#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "difd/corpus/batch.hpp"
#include "difd/error.hpp"
#include "difd/ndgrad.hpp"

namespace difd::model {

namespace nd = difd::ndgrad;

/// Sinusoidal position table, rows = positions 0..n-1.
inline nd::Tensor position_encoding(std::size_t n, std::size_t d_e) {
  if (n == 0) fail(ErrorKind::usage, "position_encoding: n must be >= 1");
  if (d_e == 0 || d_e % 2 != 0) fail(ErrorKind::usage, "position_encoding: d_e must be even, got " + std::to_string(d_e));
  nd::Tensor pe(nd::Shape{n, d_e});
  for (std::size_t pos = 0; pos < n; ++pos) {
    for (std::size_t i = 0; i < d_e / 2; ++i) {
      const double angle = static_cast<double>(pos) / std::pow(10000.0, static_cast<double>(2 * i) / static_cast<double>(d_e));
      pe(pos, 2 * i) = std::sin(angle);
      pe(pos, 2 * i + 1) = std::cos(angle);
    }
  }
  return pe;
}

inline void add_uniform(nd::ParamStore& store, std::string name, nd::Shape shape, double bound, std::mt19937_64& rng,
                        nd::Partition partition) {
  nd::Tensor t(std::move(shape));
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (auto& x : t.data) x = dist(rng);
  store.add(std::move(name), std::move(t), partition);
}

/// LSTM weights for one direction: w_ih [4h, d_e], w_hh [4h, h], b [4h],
/// gate blocks ordered i, f, g, o.
inline void init_lstm(nd::ParamStore& store, const std::string& prefix, std::size_t d_e, std::size_t d_h, std::mt19937_64& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(d_h));
  add_uniform(store, prefix + ".w_ih", nd::Shape{4 * d_h, d_e}, bound, rng, nd::Partition::feature_extractor);
  add_uniform(store, prefix + ".w_hh", nd::Shape{4 * d_h, d_h}, bound, rng, nd::Partition::feature_extractor);
  nd::Tensor b(nd::Shape{4 * d_h}, 0.0);
  for (std::size_t k = d_h; k < 2 * d_h; ++k) b.data[k] = 1.0;
  store.add(prefix + ".b", std::move(b), nd::Partition::feature_extractor);
}

/// Registers `embedding` (PAD row frozen at zero) and both LSTM directions.
inline void init_encoder(nd::ParamStore& store, nd::Tensor embedding, std::size_t d_h, std::mt19937_64& rng) {
  if (embedding.shape.size() != 2) fail(ErrorKind::shape, "embedding table must be rank 2");
  const std::size_t d_e = embedding.cols();
  position_encoding(1, d_e);
  if (d_h == 0) fail(ErrorKind::usage, "d_h must be positive");
  for (std::size_t c = 0; c < d_e; ++c) embedding(corpus::Vocabulary::kPad, c) = 0.0;
  store.add("embedding", std::move(embedding), nd::Partition::feature_extractor, {corpus::Vocabulary::kPad});
  init_lstm(store, "encoder.fwd", d_e, d_h, rng);
  init_lstm(store, "encoder.bwd", d_e, d_h, rng);
}

/// Mask as a [B*n, 1] column.
inline nd::Tensor mask_column(const corpus::Batch& batch) { return nd::Tensor(nd::Shape{batch.mask.size(), 1}, batch.mask); }

/// E = lookup + PE, rows b*n+t; padding rows are exactly zero.
inline nd::Value embed(nd::Tape& tape, nd::ParamStore& store, const corpus::Batch& batch) {
  auto table = tape.param(store, "embedding");
  const std::size_t vocab = table.rows(), d_e = table.cols();
  for (auto id : batch.token_ids) {
    if (id >= vocab) fail(ErrorKind::data, "embed: token id " + std::to_string(id) + " out of range for vocabulary of " + std::to_string(vocab));
  }
  const auto pe = position_encoding(batch.length, d_e);
  nd::Tensor pos(nd::Shape{batch.size * batch.length, d_e});
  for (std::size_t b = 0; b < batch.size; ++b) {
    for (std::size_t t = 0; t < batch.lengths[b]; ++t) {
      for (std::size_t c = 0; c < d_e; ++c) pos(batch.at(b, t), c) = pe(t, c);
    }
  }
  return nd::add(nd::row_gather(table, batch.token_ids), tape.constant(std::move(pos)));
}

namespace detail {

/// One direction over all time steps; returns h_t [B, d_h] for t = 0..n-1.
inline std::vector<nd::Value> lstm_direction(nd::Tape& tape, nd::ParamStore& store, const std::string& prefix, nd::Value e,
                                             const corpus::Batch& batch, bool reverse) {
  auto w_ih = tape.param(store, prefix + ".w_ih");
  auto w_hh = tape.param(store, prefix + ".w_hh");
  auto bias = tape.param(store, prefix + ".b");
  const std::size_t d_h = w_hh.cols(), B = batch.size, n = batch.length;
  auto xw = nd::add(nd::matmul_nt(e, w_ih), bias);

  auto h = tape.constant(nd::Tensor(nd::Shape{B, d_h}, 0.0));
  auto c = h;
  bool first = true;
  std::vector<nd::Value> out(n);
  for (std::size_t step = 0; step < n; ++step) {
    const std::size_t t = reverse ? n - 1 - step : step;
    std::vector<std::size_t> rows(B);
    nd::Tensor live(nd::Shape{B, 1});
    for (std::size_t b = 0; b < B; ++b) {
      rows[b] = batch.at(b, t);
      live.data[b] = batch.mask[batch.at(b, t)];
    }
    auto z = nd::row_gather(xw, rows);
    if (!first) z = nd::add(z, nd::matmul_nt(h, w_hh));
    auto gates = nd::sigmoid(z);
    auto i = nd::slice_last_dim(gates, 0, d_h);
    auto f = nd::slice_last_dim(gates, d_h, 2 * d_h);
    auto g = nd::tanh(nd::slice_last_dim(z, 2 * d_h, 3 * d_h));
    auto o = nd::slice_last_dim(gates, 3 * d_h, 4 * d_h);
    auto c_new = first ? nd::mul(i, g) : nd::add(nd::mul(f, c), nd::mul(i, g));
    auto h_new = nd::mul(o, nd::tanh(c_new));
    // Rows past a sentence's end keep their previous (initially zero) state.
    c = nd::blend(c_new, c, live);
    h = nd::blend(h_new, h, live);
    first = false;
    out[t] = h;
  }
  return out;
}

}  // namespace detail

/// Bidirectional LSTM over E. Returns H [B*n, 2*d_h], rows b*n+t, with
/// padding rows zero.
inline nd::Value bilstm(nd::Tape& tape, nd::ParamStore& store, nd::Value e, const corpus::Batch& batch) {
  for (double x : e.data()) {
    if (!std::isfinite(x)) fail(ErrorKind::numeric, "bilstm: non-finite input");
  }
  const auto fwd = detail::lstm_direction(tape, store, "encoder.fwd", e, batch, false);
  const auto bwd = detail::lstm_direction(tape, store, "encoder.bwd", e, batch, true);
  const nd::Value both[] = {nd::concat_rows(fwd), nd::concat_rows(bwd)};
  auto time_major = nd::concat_last_dim(both);  // rows t*B+b
  std::vector<std::size_t> perm(batch.size * batch.length);
  for (std::size_t b = 0; b < batch.size; ++b) {
    for (std::size_t t = 0; t < batch.length; ++t) perm[batch.at(b, t)] = t * batch.size + b;
  }
  return nd::mul(nd::row_gather(time_major, std::move(perm)), tape.constant(mask_column(batch)));
}

inline nd::Value encode(nd::Tape& tape, nd::ParamStore& store, const corpus::Batch& batch) {
  return bilstm(tape, store, embed(tape, store, batch), batch);
}

}  // namespace difd::model
