#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <vector>

#include "difd/ndgrad/gradcheck.hpp"
#include "difd/trainer/trainer.hpp"

namespace difd::trainer {

struct TinyGradcheckOptions {
  Variant variant = Variant::difd;
  std::uint64_t seed = 1;
  double tolerance = 1e-4;
  /// Negative control: perturb the backward rule of one op.
  std::optional<nd::Op> corrupt;
};

/// Two labeled source sentences and two target sentences, at most five tokens each.
inline TrainData tiny_corpus() {
  using corpus::Domain;
  using corpus::Polarity;
  auto make = [](std::string id, std::vector<std::string> tokens, corpus::Span aspect, std::optional<Polarity> p, Domain d) {
    corpus::Instance inst;
    inst.id = inst.sentence_id = std::move(id);
    inst.tags = corpus::encode_bio({aspect}, tokens.size());
    inst.tokens = std::move(tokens);
    inst.aspect = aspect;
    inst.polarity = p;
    inst.domain = d;
    return inst;
  };
  TrainData data;
  data.source_train = {make("s1", {"the", "soup", "was", "great"}, {1, 2}, Polarity::positive, Domain::source),
                       make("s2", {"slow", "wait", "staff", "rude", "today"}, {1, 3}, Polarity::negative, Domain::source)};
  data.source_valid = data.source_train;
  data.target = {make("t1", {"battery", "life", "is", "fine"}, {0, 2}, std::nullopt, Domain::target),
                 make("t2", {"the", "screen", "dim"}, {1, 2}, std::nullopt, Domain::target)};
  return data;
}

/// Finite-difference check of the full objective at d_e=4, d_h=3 on
/// tiny_corpus(), parameters drawn uniformly from [-0.5, 0.5]. For
/// adversarial variants the true-label domain loss is added so that the
/// domain classifier is checked as well.
inline nd::GradCheckReport tiny_gradcheck(const TinyGradcheckOptions& opt = {}) {
  RunConfig cfg;
  cfg.variant = opt.variant;
  cfg.d_e = 4;
  cfg.d_h = 3;
  cfg.seed = opt.seed;
  const auto data = tiny_corpus();
  auto m = initial_model(data, cfg);
  std::mt19937_64 rng(opt.seed);
  std::uniform_real_distribution<double> dist(-0.5, 0.5);
  for (auto& p : m.store) {
    std::vector<char> frozen(p.value.rows(), 0);
    for (auto r : p.frozen_rows) frozen[r] = 1;
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      if (!frozen[i / p.value.cols()]) p.value.data[i] = dist(rng);
    }
  }
  const auto source = corpus::make_batches(data.source_train, m.vocab, 2, 0, false).front();
  const auto target = corpus::make_batches(data.target, m.vocab, 2, 0, false).front();
  const auto mcfg = m.config;
  auto closure = [&](nd::Tape& tape) {
    auto obj = total_loss(tape, m.store, mcfg, cfg, source, mcfg.uses_target() ? &target : nullptr);
    if (!mcfg.has_domain_classifier()) return obj.total;
    return nd::add(obj.total, model::domain_loss_true(tape, m.store, obj.source->attention.f, obj.target->attention.f));
  };
  nd::GradCheckOptions gopt;
  gopt.corrupt = opt.corrupt;
  return nd::finite_diff_check(closure, m.store, opt.tolerance, gopt);
}

}  // namespace difd::trainer
