#pragma once

#include <optional>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "difd/corpus/batch.hpp"
#include "difd/model/ad_head.hpp"
#include "difd/model/allocation.hpp"
#include "difd/model/asc_head.hpp"
#include "difd/model/domain_align.hpp"
#include "difd/model/encoder.hpp"

namespace difd::model {

enum class Variant { difd, difd_s, difd_ca, difd_at, asc_at, difd_at_mmd, difd_at_coral, source_only };

inline constexpr Variant kAllVariants[] = {Variant::difd,   Variant::difd_s,      Variant::difd_ca,       Variant::difd_at,
                                           Variant::asc_at, Variant::difd_at_mmd, Variant::difd_at_coral, Variant::source_only};

inline std::string_view to_string(Variant v) {
  switch (v) {
    case Variant::difd: return "difd";
    case Variant::difd_s: return "difd-s";
    case Variant::difd_ca: return "difd-ca";
    case Variant::difd_at: return "difd-at";
    case Variant::asc_at: return "asc-at";
    case Variant::difd_at_mmd: return "difd-at+mmd";
    case Variant::difd_at_coral: return "difd-at+coral";
    case Variant::source_only: return "source-only";
  }
  return "?";
}

inline Variant variant_from_string(std::string_view s) {
  for (auto v : kAllVariants) {
    if (to_string(v) == s) return v;
  }
  fail(ErrorKind::usage, "unknown variant '" + std::string(s) + "'");
}

enum class Alignment { none, adversarial, mmd, coral };

inline std::string_view to_string(Alignment a) {
  switch (a) {
    case Alignment::none: return "none";
    case Alignment::adversarial: return "adversarial";
    case Alignment::mmd: return "mmd";
    case Alignment::coral: return "coral";
  }
  return "?";
}

/// Architecture: which components exist and how they are wired.
struct ModelConfig {
  std::size_t d_e = 16;
  std::size_t d_h = 8;
  AllocationMode allocation = AllocationMode::split;
  AspectPooling pooling = AspectPooling::sum;
  bool length_normalize = false;
  bool ad_source = true;
  bool ad_target = true;
  Alignment alignment = Alignment::adversarial;

  bool uses_target() const { return ad_target || alignment != Alignment::none; }
  bool has_domain_classifier() const { return alignment == Alignment::adversarial; }
};

/// Component layout of each variant. `no_split` is the allocation used when
/// the variant drops the learned split (full or half).
inline ModelConfig variant_model(Variant v, std::size_t d_e, std::size_t d_h, AllocationMode no_split = AllocationMode::full) {
  ModelConfig m;
  m.d_e = d_e;
  m.d_h = d_h;
  switch (v) {
    case Variant::difd: break;
    case Variant::difd_s:
      m.ad_target = false;
      m.alignment = Alignment::none;
      break;
    case Variant::difd_ca: m.allocation = no_split; break;
    case Variant::difd_at: m.alignment = Alignment::none; break;
    case Variant::asc_at:
      m.allocation = no_split;
      m.ad_source = m.ad_target = false;
      break;
    case Variant::difd_at_mmd: m.alignment = Alignment::mmd; break;
    case Variant::difd_at_coral: m.alignment = Alignment::coral; break;
    case Variant::source_only:
      m.allocation = no_split;
      m.ad_target = false;
      m.alignment = Alignment::none;
      break;
  }
  return m;
}

inline nlohmann::ordered_json to_json(const ModelConfig& m) {
  return {{"d_e", m.d_e},
          {"d_h", m.d_h},
          {"allocation", to_string(m.allocation)},
          {"pooling", m.pooling == AspectPooling::sum ? "sum" : "mean"},
          {"length_normalize", m.length_normalize},
          {"ad_source", m.ad_source},
          {"ad_target", m.ad_target},
          {"alignment", to_string(m.alignment)}};
}

inline ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig m;
  try {
    m.d_e = j.at("d_e").get<std::size_t>();
    m.d_h = j.at("d_h").get<std::size_t>();
    m.allocation = allocation_mode_from_string(j.at("allocation").get<std::string>());
    const auto pooling = j.at("pooling").get<std::string>();
    if (pooling != "sum" && pooling != "mean") fail(ErrorKind::data, "model config: unknown pooling '" + pooling + "'");
    m.pooling = pooling == "sum" ? AspectPooling::sum : AspectPooling::mean;
    m.length_normalize = j.at("length_normalize").get<bool>();
    m.ad_source = j.at("ad_source").get<bool>();
    m.ad_target = j.at("ad_target").get<bool>();
    const auto a = j.at("alignment").get<std::string>();
    if (a == "none") m.alignment = Alignment::none;
    else if (a == "adversarial") m.alignment = Alignment::adversarial;
    else if (a == "mmd") m.alignment = Alignment::mmd;
    else if (a == "coral") m.alignment = Alignment::coral;
    else fail(ErrorKind::data, "model config: unknown alignment '" + a + "'");
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::data, std::string("model config: ") + e.what());
  }
  return m;
}

/// Registers every parameter the configuration needs. Parameter draws come
/// from `rng` in a fixed order.
inline void init_model(nd::ParamStore& store, const ModelConfig& m, nd::Tensor embedding, std::mt19937_64& rng) {
  if (embedding.cols() != m.d_e) fail(ErrorKind::shape, "init_model: embedding width does not match d_e");
  init_encoder(store, std::move(embedding), m.d_h, rng);
  if (m.allocation == AllocationMode::split) init_allocation(store, m.d_h, rng);
  init_asc(store, m.d_h, rng);
  if (m.ad_source) init_ad(store, corpus::Domain::source, m.d_h, rng);
  if (m.ad_target) init_ad(store, corpus::Domain::target, m.d_h, rng);
  if (m.has_domain_classifier()) init_domain_classifier(store, m.d_h, rng);
}

struct Forward {
  nd::Value h;
  Allocation alloc;
  nd::Value ha;
  Attention attention;
  nd::Value logits;
};

/// Encoder, allocation and the sentiment path for one batch.
inline Forward forward(nd::Tape& tape, nd::ParamStore& store, const ModelConfig& m, const corpus::Batch& batch) {
  Forward out;
  out.h = encode(tape, store, batch);
  out.alloc = allocate(tape, store, out.h, m.allocation);
  out.ha = aspect_position_rep(tape, out.alloc.hc, batch, m.pooling);
  out.attention = aspect_opinion_attention(tape, store, out.alloc.hc, out.ha, batch, m.length_normalize);
  out.logits = sentiment_logits(tape, store, out.attention.f);
  return out;
}

}  // namespace difd::model
