#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <set>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "difd/analysis/evaluate.hpp"
#include "difd/corpus/batch.hpp"
#include "difd/corpus/vocab.hpp"
#include "difd/model/saved.hpp"

namespace difd::trainer {

namespace nd = difd::ndgrad;
using model::Alignment;
using model::Variant;

struct RunConfig {
  Variant variant = Variant::difd;
  std::size_t d_e = 16;
  std::size_t d_h = 8;
  double lr = 0.01;
  std::size_t batch_size = 32;
  double lambda_a = 1.0;
  double lambda_d = 1.0;
  std::optional<double> clip_norm = 5.0;
  double momentum = 0.0;
  std::size_t patience = 10;
  std::size_t max_epochs = 100;
  std::uint64_t seed = 1;
  /// Allocation used by variants without the learned split.
  model::AllocationMode no_split = model::AllocationMode::full;
  model::AspectPooling pooling = model::AspectPooling::sum;
  bool length_normalize = false;
  std::optional<std::string> embedding_file;

  model::ModelConfig model() const {
    auto m = model::variant_model(variant, d_e, d_h, no_split);
    m.pooling = pooling;
    m.length_normalize = length_normalize;
    return m;
  }

  nd::SgdOptions sgd() const { return {lr, clip_norm, momentum}; }

  void validate() const {
    auto positive = [](double x, const char* name) {
      if (!(x > 0.0) || !std::isfinite(x)) fail(ErrorKind::usage, std::string("config: ") + name + " must be positive");
    };
    positive(static_cast<double>(d_e), "d_e");
    positive(static_cast<double>(d_h), "d_h");
    positive(lr, "lr");
    positive(static_cast<double>(batch_size), "batch_size");
    positive(static_cast<double>(patience), "patience");
    positive(static_cast<double>(max_epochs), "max_epochs");
    if (clip_norm) positive(*clip_norm, "clip_norm");
    if (lambda_a < 0.0 || lambda_d < 0.0) fail(ErrorKind::usage, "config: lambda_a and lambda_d must be >= 0");
    if (momentum < 0.0 || momentum >= 1.0) fail(ErrorKind::usage, "config: momentum must be in [0, 1)");
    if (d_e % 2 != 0) fail(ErrorKind::usage, "config: d_e must be even");
    if (no_split == model::AllocationMode::split) fail(ErrorKind::usage, "config: no_split must be full or half");
  }
};

inline nlohmann::ordered_json to_json(const RunConfig& c) {
  nlohmann::ordered_json j;
  j["variant"] = model::to_string(c.variant);
  j["d_e"] = c.d_e;
  j["d_h"] = c.d_h;
  j["lr"] = c.lr;
  j["batch_size"] = c.batch_size;
  j["lambda_a"] = c.lambda_a;
  j["lambda_d"] = c.lambda_d;
  j["clip_norm"] = c.clip_norm ? nlohmann::ordered_json(*c.clip_norm) : nlohmann::ordered_json(nullptr);
  j["momentum"] = c.momentum;
  j["patience"] = c.patience;
  j["max_epochs"] = c.max_epochs;
  j["seed"] = c.seed;
  j["no_split"] = model::to_string(c.no_split);
  j["pooling"] = c.pooling == model::AspectPooling::sum ? "sum" : "mean";
  j["length_normalize"] = c.length_normalize;
  j["embedding_file"] = c.embedding_file ? nlohmann::ordered_json(*c.embedding_file) : nlohmann::ordered_json(nullptr);
  return j;
}

/// Reads the keys present in `j` over `base`; unknown keys are rejected.
inline RunConfig run_config_from_json(const nlohmann::json& j, RunConfig c = {}) {
  static const std::set<std::string> known{"variant",  "d_e",      "d_h",        "lr",      "batch_size",
                                           "lambda_a", "lambda_d", "clip_norm",  "momentum", "patience",
                                           "max_epochs", "seed",   "no_split",   "pooling", "length_normalize",
                                           "embedding_file"};
  if (!j.is_object()) fail(ErrorKind::usage, "config: expected a JSON object");
  for (const auto& [key, _] : j.items()) {
    if (!known.count(key)) fail(ErrorKind::usage, "config: unknown key '" + key + "'");
  }
  try {
    if (j.contains("variant")) c.variant = model::variant_from_string(j["variant"].get<std::string>());
    c.d_e = j.value("d_e", c.d_e);
    c.d_h = j.value("d_h", c.d_h);
    c.lr = j.value("lr", c.lr);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.lambda_a = j.value("lambda_a", c.lambda_a);
    c.lambda_d = j.value("lambda_d", c.lambda_d);
    if (j.contains("clip_norm")) c.clip_norm = j["clip_norm"].is_null() ? std::nullopt : std::optional<double>(j["clip_norm"].get<double>());
    c.momentum = j.value("momentum", c.momentum);
    c.patience = j.value("patience", c.patience);
    c.max_epochs = j.value("max_epochs", c.max_epochs);
    c.seed = j.value("seed", c.seed);
    if (j.contains("no_split")) c.no_split = model::allocation_mode_from_string(j["no_split"].get<std::string>());
    if (j.contains("pooling")) {
      const auto p = j["pooling"].get<std::string>();
      if (p != "sum" && p != "mean") fail(ErrorKind::usage, "config: pooling must be sum or mean");
      c.pooling = p == "sum" ? model::AspectPooling::sum : model::AspectPooling::mean;
    }
    c.length_normalize = j.value("length_normalize", c.length_normalize);
    if (j.contains("embedding_file")) {
      c.embedding_file = j["embedding_file"].is_null() ? std::nullopt : std::optional<std::string>(j["embedding_file"].get<std::string>());
    }
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::usage, std::string("config: ") + e.what());
  }
  return c;
}

/// Individual loss terms of one objective evaluation (unweighted).
struct LossParts {
  double sentiment = 0.0;
  double ad_source = 0.0;
  double ad_target = 0.0;
  /// Flipped-label domain loss, MMD or CORAL, per the alignment in use.
  double alignment = 0.0;
  double total = 0.0;
};

struct Objective {
  nd::Value total;
  LossParts parts;
  std::optional<model::Forward> source;
  std::optional<model::Forward> target;
};

/// L = L_s^c + lambda_a * A + lambda_d * (L_s^d + L_t^d), with the terms the
/// model configuration does not have left out.
inline Objective total_loss(nd::Tape& tape, nd::ParamStore& store, const model::ModelConfig& m, const RunConfig& cfg,
                            const corpus::Batch& source, const corpus::Batch* target) {
  if (!source.fully_labeled()) fail(ErrorKind::data, "total_loss: source batch must be labeled");
  if (m.uses_target() && target == nullptr) fail(ErrorKind::usage, "total_loss: this variant needs a target batch");
  Objective obj;
  obj.source = model::forward(tape, store, m, source);
  auto loss = model::sentiment_loss(obj.source->logits, source.polarity);
  obj.parts.sentiment = loss.item();
  if (m.ad_source) {
    auto l = model::ad_loss(tape, store, obj.source->alloc.hd, source, corpus::Domain::source);
    obj.parts.ad_source = l.item();
    loss = nd::add(loss, nd::scalar_mul(l, cfg.lambda_d));
  }
  if (m.uses_target()) {
    obj.target = model::forward(tape, store, m, *target);
    if (m.ad_target) {
      auto l = model::ad_loss(tape, store, obj.target->alloc.hd, *target, corpus::Domain::target);
      obj.parts.ad_target = l.item();
      loss = nd::add(loss, nd::scalar_mul(l, cfg.lambda_d));
    }
    std::optional<nd::Value> align;
    const auto f_s = obj.source->attention.f, f_t = obj.target->attention.f;
    switch (m.alignment) {
      case Alignment::none: break;
      case Alignment::adversarial: align = model::domain_loss_flipped(tape, store, f_s, f_t); break;
      case Alignment::mmd: align = model::mmd_loss(tape, f_s, f_t); break;
      case Alignment::coral: align = model::coral_loss(tape, f_s, f_t); break;
    }
    if (align) {
      obj.parts.alignment = align->item();
      loss = nd::add(loss, nd::scalar_mul(*align, cfg.lambda_a));
    }
  }
  obj.total = loss;
  obj.parts.total = loss.item();
  return obj;
}

struct StepReport {
  LossParts parts;
  /// True-label domain loss of step (b); absent when the step is skipped.
  std::optional<double> domain_loss;
  std::size_t target_forwards = 0;
};

inline std::string describe(const LossParts& p) {
  std::ostringstream os;
  os << "sentiment=" << p.sentiment << " ad_source=" << p.ad_source << " ad_target=" << p.ad_target
     << " alignment=" << p.alignment << " total=" << p.total;
  return os.str();
}

/// (a) every feature-extractor parameter descends L with the domain classifier
/// frozen; (b) for adversarial alignment, the domain classifier descends
/// lambda_a * L_true on a fresh forward pass of the same batches with the
/// feature extractor frozen.
/// `after_substep`, if set, sees the store after each sub-step ('a', 'b').
inline StepReport train_step(nd::ParamStore& store, const model::ModelConfig& m, const RunConfig& cfg,
                             const corpus::Batch& source, const corpus::Batch* target,
                             const std::function<void(char, const nd::ParamStore&)>& after_substep = {}) {
  StepReport report;
  const auto F = nd::Partition::feature_extractor;
  const auto D = nd::Partition::domain_classifier;
  {
    nd::Tape tape;
    auto obj = total_loss(tape, store, m, cfg, source, target);
    report.parts = obj.parts;
    report.target_forwards += obj.target.has_value();
    if (!std::isfinite(obj.parts.total)) fail(ErrorKind::numeric, "non-finite loss: " + describe(obj.parts));
    tape.backward(obj.total, store, nd::PartitionSet::only(D));
    nd::sgd_step(store, nd::PartitionSet::only(F), cfg.sgd());
    if (after_substep) after_substep('a', store);
  }
  if (m.alignment == Alignment::adversarial) {
    nd::Tape tape;
    const auto fs = model::forward(tape, store, m, source);
    const auto ft = model::forward(tape, store, m, *target);
    ++report.target_forwards;
    auto l = model::domain_loss_true(tape, store, fs.attention.f, ft.attention.f);
    report.domain_loss = l.item();
    if (!std::isfinite(l.item())) fail(ErrorKind::numeric, "non-finite domain loss: " + describe(report.parts));
    tape.backward(nd::scalar_mul(l, cfg.lambda_a), store, nd::PartitionSet::only(F));
    nd::sgd_step(store, nd::PartitionSet::only(D), cfg.sgd());
    if (after_substep) after_substep('b', store);
  }
  return report;
}

struct TrainData {
  std::vector<corpus::Instance> source_train;
  std::vector<corpus::Instance> source_valid;
  /// Target-domain instances for adaptation; polarity is never read.
  std::vector<corpus::Instance> target;
};

/// Vocabulary over source-train and target tokens, and the model's initial
/// parameters, all drawn from the run seed.
inline model::Model initial_model(const TrainData& data, const RunConfig& cfg) {
  cfg.validate();
  std::vector<corpus::Instance> all = data.source_train;
  const auto m = cfg.model();
  if (m.uses_target()) all.insert(all.end(), data.target.begin(), data.target.end());
  std::optional<std::filesystem::path> emb;
  if (cfg.embedding_file) emb = *cfg.embedding_file;
  auto init = corpus::build_vocab_and_embeddings(all, emb, cfg.d_e, cfg.seed);
  model::Model out;
  out.config = m;
  out.vocab = std::move(init.vocab);
  std::mt19937_64 rng(cfg.seed ^ 0x9E3779B97F4A7C15ULL);
  model::init_model(out.store, m, std::move(init.table), rng);
  out.info = {{"variant", std::string(model::to_string(cfg.variant))}, {"seed", cfg.seed}};
  return out;
}

struct EpochRecord {
  std::size_t epoch = 0;
  LossParts mean_parts;
  double mean_domain_loss = 0.0;
  double valid_accuracy = 0.0;
  double valid_macro_f1 = 0.0;
  bool improved = false;
};

inline nlohmann::ordered_json to_json(const EpochRecord& r) {
  nlohmann::ordered_json j;
  j["epoch"] = r.epoch;
  j["loss"] = {{"sentiment", r.mean_parts.sentiment},
               {"ad_source", r.mean_parts.ad_source},
               {"ad_target", r.mean_parts.ad_target},
               {"alignment", r.mean_parts.alignment},
               {"total", r.mean_parts.total},
               {"domain", r.mean_domain_loss}};
  j["valid_accuracy"] = r.valid_accuracy;
  j["valid_macro_f1"] = r.valid_macro_f1;
  j["improved"] = r.improved;
  return j;
}

struct FitResult {
  model::Model best;
  model::Model final;
  std::vector<EpochRecord> history;
  std::size_t best_epoch = 0;
  double best_accuracy = -1.0;
  std::size_t target_forwards = 0;
};

struct FitHooks {
  /// Called after every epoch with the current (not best) model.
  std::function<void(const EpochRecord&, model::Model&)> on_epoch;
  /// Called after every train_step.
  std::function<void(const StepReport&)> on_step;
};

/// Epochs of paired mini-batch steps with early stopping on source
/// validation accuracy (ties keep the earlier epoch).
inline FitResult fit(const TrainData& data, const RunConfig& cfg, const FitHooks& hooks = {}) {
  if (data.source_train.empty()) fail(ErrorKind::data, "fit: empty source training set");
  if (data.source_valid.empty()) fail(ErrorKind::data, "fit: empty source validation set");
  const auto mcfg = cfg.model();
  if (mcfg.uses_target() && data.target.empty()) {
    fail(ErrorKind::data, "fit: variant " + std::string(model::to_string(cfg.variant)) + " needs target-domain data");
  }
  FitResult result;
  result.final = initial_model(data, cfg);
  auto& cur = result.final;
  result.best = cur;

  std::mt19937_64 order_rng(cfg.seed);
  std::size_t since_best = 0;
  for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    const auto src_seed = order_rng();
    const auto tgt_seed = order_rng();
    const auto src_batches = corpus::make_batches(data.source_train, cur.vocab, cfg.batch_size, src_seed, true);
    std::vector<corpus::Batch> tgt_batches;
    if (mcfg.uses_target()) tgt_batches = corpus::make_batches(data.target, cur.vocab, cfg.batch_size, tgt_seed, true);

    EpochRecord rec;
    rec.epoch = epoch;
    std::size_t domain_steps = 0;
    for (std::size_t k = 0; k < src_batches.size(); ++k) {
      const corpus::Batch* tgt = tgt_batches.empty() ? nullptr : &tgt_batches[k % tgt_batches.size()];
      const auto step = train_step(cur.store, mcfg, cfg, src_batches[k], tgt);
      result.target_forwards += step.target_forwards;
      rec.mean_parts.sentiment += step.parts.sentiment;
      rec.mean_parts.ad_source += step.parts.ad_source;
      rec.mean_parts.ad_target += step.parts.ad_target;
      rec.mean_parts.alignment += step.parts.alignment;
      rec.mean_parts.total += step.parts.total;
      if (step.domain_loss) {
        rec.mean_domain_loss += *step.domain_loss;
        ++domain_steps;
      }
      if (hooks.on_step) hooks.on_step(step);
    }
    const double nb = static_cast<double>(src_batches.size());
    rec.mean_parts.sentiment /= nb;
    rec.mean_parts.ad_source /= nb;
    rec.mean_parts.ad_target /= nb;
    rec.mean_parts.alignment /= nb;
    rec.mean_parts.total /= nb;
    if (domain_steps) rec.mean_domain_loss /= static_cast<double>(domain_steps);

    const auto report = analysis::evaluate(cur, data.source_valid);
    rec.valid_accuracy = report.accuracy;
    rec.valid_macro_f1 = report.macro_f1;
    rec.improved = report.accuracy > result.best_accuracy;
    if (rec.improved) {
      result.best_accuracy = report.accuracy;
      result.best_epoch = epoch;
      result.best.store = cur.store;
      since_best = 0;
    } else {
      ++since_best;
    }
    result.history.push_back(rec);
    if (hooks.on_epoch) hooks.on_epoch(rec, cur);
    if (since_best >= cfg.patience) break;
  }
  result.best.info["epoch"] = result.best_epoch;
  result.final.info["epoch"] = result.history.size();
  return result;
}

inline std::string history_jsonl(const std::vector<EpochRecord>& history) {
  std::string out;
  for (const auto& r : history) out += to_json(r).dump() + "\n";
  return out;
}

/// Writes config.json, history.jsonl, best.ckpt and final.ckpt under `dir`.
inline void write_run_dir(const std::filesystem::path& dir, const nlohmann::ordered_json& resolved_config, const FitResult& r) {
  std::filesystem::create_directories(dir);
  nd::write_file_atomic(dir / "config.json", resolved_config.dump(2) + "\n");
  nd::write_file_atomic(dir / "history.jsonl", history_jsonl(r.history));
  model::save_model(dir / "best.ckpt", r.best);
  model::save_model(dir / "final.ckpt", r.final);
}

}  // namespace difd::trainer
