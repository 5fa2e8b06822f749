#pragma once

#include <cmath>
#include <ostream>
#include <random>
#include <string>
#include <vector>

#include "difd/corpus/batch.hpp"
#include "difd/model/encoder.hpp"

namespace difd::model {

/// How H is divided between the sentiment and aspect paths.
///  split: learned two-way gate (the full model)
///  full:  both paths receive H unchanged
///  half:  both paths receive H/2
enum class AllocationMode { split, full, half };

inline std::string_view to_string(AllocationMode m) {
  switch (m) {
    case AllocationMode::split: return "split";
    case AllocationMode::full: return "full";
    case AllocationMode::half: return "half";
  }
  return "?";
}

inline AllocationMode allocation_mode_from_string(std::string_view s) {
  if (s == "split") return AllocationMode::split;
  if (s == "full") return AllocationMode::full;
  if (s == "half") return AllocationMode::half;
  fail(ErrorKind::usage, "unknown allocation mode '" + std::string(s) + "'");
}

/// W_a [2h, 2h], W_b [2, 2h].
inline void init_allocation(nd::ParamStore& store, std::size_t d_h, std::mt19937_64& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(2 * d_h));
  add_uniform(store, "allocation.w_a", nd::Shape{2 * d_h, 2 * d_h}, bound, rng, nd::Partition::feature_extractor);
  add_uniform(store, "allocation.w_b", nd::Shape{2, 2 * d_h}, bound, rng, nd::Partition::feature_extractor);
}

struct Allocation {
  /// [B*n, 2] with columns (beta_c, beta_d); absent unless mode is split.
  std::optional<nd::Value> beta;
  nd::Value hc;
  nd::Value hd;
};

/// beta_i = softmax(W_b tanh(W_a h_i)); H^c = beta^c H, H^d = beta^d H.
inline Allocation allocate(nd::Tape& tape, nd::ParamStore& store, nd::Value h, AllocationMode mode = AllocationMode::split) {
  for (double x : h.data()) {
    if (!std::isfinite(x)) fail(ErrorKind::numeric, "allocate: non-finite H");
  }
  if (mode == AllocationMode::full) return {std::nullopt, h, h};
  if (mode == AllocationMode::half) {
    auto half = nd::scalar_mul(h, 0.5);
    return {std::nullopt, half, half};
  }
  auto w_a = tape.param(store, "allocation.w_a");
  auto w_b = tape.param(store, "allocation.w_b");
  auto beta = nd::softmax(nd::matmul_nt(nd::tanh(nd::matmul_nt(h, w_a)), w_b));
  return {beta, nd::mul(h, nd::slice_last_dim(beta, 0, 1)), nd::mul(h, nd::slice_last_dim(beta, 1, 2))};
}

struct BetaRecord {
  std::string sentence_id;
  std::size_t position = 0;
  std::string token;
  double beta_c = 0.0;
  double beta_d = 0.0;
};

/// One record per unmasked token. `tokens` gives the surface word of row b
/// at position t.
inline std::vector<BetaRecord> export_beta(const corpus::Batch& batch, const std::vector<std::vector<std::string>>& tokens,
                                           const nd::Value& beta) {
  std::vector<BetaRecord> out;
  for (std::size_t b = 0; b < batch.size; ++b) {
    for (std::size_t t = 0; t < batch.lengths[b]; ++t) {
      const std::size_t r = batch.at(b, t);
      out.push_back({batch.sentence_ids[b], t, tokens[b][t], beta.data()[2 * r], beta.data()[2 * r + 1]});
    }
  }
  return out;
}

inline constexpr const char* kBetaCsvHeader = "sentence_id,position,token,beta_c,beta_d";

inline std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

inline void write_beta_csv(std::ostream& out, const std::vector<BetaRecord>& records) {
  out << kBetaCsvHeader << '\n';
  char buf[64];
  for (const auto& r : records) {
    out << csv_field(r.sentence_id) << ',' << r.position << ',' << csv_field(r.token);
    std::snprintf(buf, sizeof buf, ",%.17g,%.17g\n", r.beta_c, r.beta_d);
    out << buf;
  }
}

}  // namespace difd::model
