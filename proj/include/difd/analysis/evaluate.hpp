#pragma once

#include <array>
#include <map>
#include <set>
#include <ostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "difd/analysis/metrics.hpp"
#include "difd/corpus/batch.hpp"
#include "difd/model/saved.hpp"

namespace difd::analysis {

namespace nd = difd::ndgrad;

struct Prediction {
  std::string id;
  std::optional<Polarity> gold;
  Polarity predicted = Polarity::positive;
  std::array<double, kNumPolarities> logits{};
};

/// Runs `fn(batch, forward)` over the instances in their given order.
template <class Fn>
void for_each_batch(model::Model& m, const std::vector<corpus::Instance>& instances, std::size_t batch_size, Fn&& fn) {
  if (instances.empty()) fail(ErrorKind::data, "no instances to run");
  for (const auto& batch : corpus::make_batches(instances, m.vocab, batch_size, 0, false)) {
    nd::Tape tape;
    const auto fw = model::forward(tape, m.store, m.config, batch);
    fn(batch, fw, tape);
  }
}

inline std::vector<Prediction> predict_instances(model::Model& m, const std::vector<corpus::Instance>& instances,
                                                 std::size_t batch_size = 64) {
  std::vector<Prediction> out;
  for_each_batch(m, instances, batch_size, [&](const corpus::Batch& batch, const model::Forward& fw, nd::Tape&) {
    const auto& logits = fw.logits.tensor();
    const auto pred = model::predict(logits);
    for (std::size_t b = 0; b < batch.size; ++b) {
      const auto& inst = instances[batch.instance_index[b]];
      Prediction p{inst.id, inst.polarity, pred[b], {}};
      for (std::size_t c = 0; c < kNumPolarities; ++c) p.logits[c] = logits(b, c);
      out.push_back(std::move(p));
    }
  });
  return out;
}

inline MetricReport evaluate(model::Model& m, const std::vector<corpus::Instance>& instances) {
  for (const auto& inst : instances) {
    if (!inst.polarity) fail(ErrorKind::data, "evaluate: instance '" + inst.id + "' has no gold polarity");
  }
  std::vector<Polarity> gold, pred;
  for (const auto& p : predict_instances(m, instances)) {
    gold.push_back(*p.gold);
    pred.push_back(p.predicted);
  }
  return metric_report(gold, pred);
}

inline nlohmann::ordered_json to_json(const Prediction& p) {
  nlohmann::ordered_json j;
  j["id"] = p.id;
  j["gold"] = p.gold ? nlohmann::ordered_json(std::string(corpus::to_string(*p.gold))) : nlohmann::ordered_json(nullptr);
  j["predicted"] = std::string(corpus::to_string(p.predicted));
  j["logits"] = p.logits;
  return j;
}

/// Token-level tag accuracy and span F1 of the given domain's tagger.
struct TaggingReport {
  double token_accuracy = 0.0;
  corpus::SpanScore spans;
  std::size_t sentences = 0;
};

inline TaggingReport evaluate_tagging(model::Model& m, const std::vector<corpus::Instance>& instances, corpus::Domain tagger) {
  const bool present = tagger == corpus::Domain::source ? m.config.ad_source : m.config.ad_target;
  if (!present) fail(ErrorKind::usage, "evaluate_tagging: model has no " + std::string(corpus::to_string(tagger)) + " tagger");
  TaggingReport r;
  std::size_t correct = 0, total = 0;
  std::set<std::string> seen;
  for_each_batch(m, instances, 64, [&](const corpus::Batch& batch, const model::Forward& fw, nd::Tape& tape) {
    const auto logits = model::tag_logits(tape, m.store, fw.alloc.hd, tagger);
    const auto tags = model::decode_tags(logits.tensor(), batch);
    for (std::size_t b = 0; b < batch.size; ++b) {
      if (!seen.insert(batch.sentence_ids[b]).second) continue;
      ++r.sentences;
      std::vector<corpus::Tag> gold;
      for (std::size_t t = 0; t < batch.lengths[b]; ++t) {
        gold.push_back(batch.tags[batch.at(b, t)]);
        // Raw argmax is compared before repair.
        const auto raw = model::argmax(std::span<const double>(logits.tensor().data).subspan(batch.at(b, t) * corpus::kNumTags, corpus::kNumTags));
        correct += raw == static_cast<std::size_t>(gold.back());
        ++total;
      }
      r.spans += corpus::score_spans(corpus::decode_bio(gold), corpus::decode_bio(tags[b]));
    }
  });
  r.token_accuracy = total ? static_cast<double>(correct) / static_cast<double>(total) : 0.0;
  return r;
}

enum class FeatureKind { invariant, specific };

inline FeatureKind feature_kind_from_string(std::string_view s) {
  if (s == "invariant") return FeatureKind::invariant;
  if (s == "specific") return FeatureKind::specific;
  fail(ErrorKind::usage, "unknown feature kind '" + std::string(s) + "' (expected invariant or specific)");
}

struct FeatureSet {
  std::vector<std::vector<double>> rows;
  std::vector<corpus::Domain> domains;
  std::vector<std::string> ids;

  std::vector<int> domain_labels() const {
    std::vector<int> out;
    for (auto d : domains) out.push_back(static_cast<int>(d));
    return out;
  }
};

/// invariant: f per instance. specific: masked mean of H^d per distinct
/// sentence (of H when the model has no learned split).
inline FeatureSet extract_features(model::Model& m, const std::vector<corpus::Instance>& instances, FeatureKind kind) {
  FeatureSet out;
  std::set<std::string> seen;
  for_each_batch(m, instances, 64, [&](const corpus::Batch& batch, const model::Forward& fw, nd::Tape&) {
    if (kind == FeatureKind::invariant) {
      const auto& f = fw.attention.f.tensor();
      for (std::size_t b = 0; b < batch.size; ++b) {
        out.rows.emplace_back(f.data.begin() + static_cast<std::ptrdiff_t>(b * f.cols()),
                              f.data.begin() + static_cast<std::ptrdiff_t>((b + 1) * f.cols()));
        out.domains.push_back(batch.domains[b]);
        out.ids.push_back(instances[batch.instance_index[b]].id);
      }
      return;
    }
    const auto& h = (m.config.allocation == model::AllocationMode::split ? fw.alloc.hd : fw.h).tensor();
    for (std::size_t b = 0; b < batch.size; ++b) {
      if (!seen.insert(batch.sentence_ids[b]).second) continue;
      std::vector<double> row(h.cols(), 0.0);
      for (std::size_t t = 0; t < batch.lengths[b]; ++t) {
        for (std::size_t c = 0; c < h.cols(); ++c) row[c] += h(batch.at(b, t), c);
      }
      for (auto& v : row) v /= static_cast<double>(batch.lengths[b]);
      out.rows.push_back(std::move(row));
      out.domains.push_back(batch.domains[b]);
      out.ids.push_back(batch.sentence_ids[b]);
    }
  });
  return out;
}

inline void write_features_csv(std::ostream& out, const FeatureSet& fs) {
  out << "id,domain";
  const std::size_t dim = fs.rows.empty() ? 0 : fs.rows.front().size();
  for (std::size_t k = 0; k < dim; ++k) out << ",x" << k;
  out << '\n';
  char buf[32];
  for (std::size_t i = 0; i < fs.rows.size(); ++i) {
    out << model::csv_field(fs.ids[i]) << ',' << corpus::to_string(fs.domains[i]);
    for (double v : fs.rows[i]) {
      std::snprintf(buf, sizeof buf, ",%.17g", v);
      out << buf;
    }
    out << '\n';
  }
}

/// beta records for every token of the instances' distinct sentences.
inline std::vector<model::BetaRecord> export_beta(model::Model& m, const std::vector<corpus::Instance>& instances) {
  if (m.config.allocation != model::AllocationMode::split) fail(ErrorKind::usage, "no allocation weights in this variant");
  std::vector<model::BetaRecord> out;
  std::set<std::string> seen;
  std::vector<corpus::Instance> unique;
  for (const auto& inst : instances) {
    if (seen.insert(inst.sentence_id).second) unique.push_back(inst);
  }
  for_each_batch(m, unique, 64, [&](const corpus::Batch& batch, const model::Forward& fw, nd::Tape&) {
    std::vector<std::vector<std::string>> tokens;
    for (auto i : batch.instance_index) tokens.push_back(unique[i].tokens);
    auto recs = model::export_beta(batch, tokens, *fw.alloc.beta);
    out.insert(out.end(), recs.begin(), recs.end());
  });
  return out;
}

}  // namespace difd::analysis
