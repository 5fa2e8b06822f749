// Acceptance suite: one PASS/FAIL (or SKIP) line per criterion on stdout,
// progress on stderr. Exit status is nonzero when any criterion fails.

#include <unistd.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <iostream>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "oracles.hpp"
#include "toy.hpp"

namespace {

using namespace difd;
namespace nd = difd::ndgrad;
namespace fs = std::filesystem;
using corpus::Domain;
using model::Variant;

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

enum class Status { pass, fail, skip };

struct Outcome {
  Status status = Status::fail;
  std::string detail;
};

Outcome verdict(bool ok, std::string detail) { return {ok ? Status::pass : Status::fail, std::move(detail)}; }

// ------------------------------------------------------------------ 1

Outcome gradient_correctness() {
  const auto t0 = Clock::now();
  double worst = 0.0;
  std::string worst_variant;
  std::vector<std::string> failed;
  for (auto v : model::kAllVariants) {
    trainer::TinyGradcheckOptions opt;
    opt.variant = v;
    const auto r = trainer::tiny_gradcheck(opt);
    if (r.max_rel_error() > worst) {
      worst = r.max_rel_error();
      worst_variant = model::to_string(v);
    }
    if (!r.passed()) failed.emplace_back(model::to_string(v));
  }
  const double secs = seconds_since(t0);
  std::string detail = fmt("all variants, max_rel_error %.2e (%s) < 1e-4, %.1f s < 60 s", worst, worst_variant.c_str(), secs);
  for (const auto& f : failed) detail += "; failed: " + f;
  return verdict(failed.empty() && worst < 1e-4 && secs < 60.0, detail);
}

// ------------------------------------------------------------------ 2

Outcome equation_oracles() {
  std::map<std::string, double> worst{{"L_s^c", 0.0}, {"L_a^D", 0.0}, {"L_a^F", 0.0}, {"L^d source", 0.0},
                                      {"L^d target", 0.0}, {"MMD", 0.0}, {"CORAL", 0.0}};
  auto note = [&](const std::string& k, double got, double want) { worst[k] = std::max(worst[k], std::abs(got - want)); };
  for (std::uint64_t trial = 0; trial < 5; ++trial) {
    corpus::SyntheticSpec spec;
    spec.seed = 100 + trial;
    spec.source.primary_count = spec.target.primary_count = 6;
    spec.source.heldout_count = spec.target.heldout_count = 1;
    spec.source.max_length = spec.target.max_length = 8;
    const auto c = corpus::generate_synthetic(spec);
    trainer::TrainData data{c.source_train, c.source_test, c.target_unlabeled};
    trainer::RunConfig cfg;
    cfg.d_e = 4;
    cfg.d_h = 3;
    cfg.seed = trial + 1;
    auto m = trainer::initial_model(data, cfg);
    std::mt19937_64 rng(trial);
    toy::scramble(m.store, rng, 1.0);
    const auto s = toy::batch(data.source_train, m.vocab);
    const auto t = toy::batch(data.target, m.vocab);

    nd::Tape tape;
    const auto fs_ = model::forward(tape, m.store, m.config, s);
    const auto ft_ = model::forward(tape, m.store, m.config, t);
    const auto& f_s = fs_.attention.f;
    const auto& f_t = ft_.attention.f;
    note("L_s^c", model::sentiment_loss(fs_.logits, s.polarity).item(), oracle::sentiment_loss(fs_.logits.tensor(), s.polarity));
    note("L_a^D", model::domain_loss_true(tape, m.store, f_s, f_t).item(),
         oracle::domain_loss(m.store, f_s.tensor(), f_t.tensor(), 0));
    note("L_a^F", model::domain_loss_flipped(tape, m.store, f_s, f_t).item(),
         oracle::domain_loss(m.store, f_s.tensor(), f_t.tensor(), 1));
    note("L^d source", model::ad_loss(tape, m.store, fs_.alloc.hd, s, Domain::source).item(),
         oracle::ad_loss(model::tag_logits(tape, m.store, fs_.alloc.hd, Domain::source).tensor(), s));
    note("L^d target", model::ad_loss(tape, m.store, ft_.alloc.hd, t, Domain::target).item(),
         oracle::ad_loss(model::tag_logits(tape, m.store, ft_.alloc.hd, Domain::target).tensor(), t));
    note("MMD", model::mmd_loss(tape, f_s, f_t).item(), oracle::mmd(f_s.tensor(), f_t.tensor()));
    note("CORAL", model::coral_loss(tape, f_s, f_t).item(), oracle::coral(f_s.tensor(), f_t.tensor()));
  }
  bool ok = true;
  std::string detail = "5 micro-batches, max |diff|:";
  for (const auto& [k, v] : worst) {
    ok = ok && v <= 1e-10;
    detail += fmt(" %s %.1e", k.c_str(), v);
  }
  return verdict(ok, detail + " (tol 1e-10)");
}

// ------------------------------------------------------------------ 3

Outcome ca_invariants() {
  std::mt19937_64 rng(2024);
  double sum_err = 0.0, recon_err = 0.0, oracle_err = 0.0;
  std::size_t rows_checked = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t d_h = 1 + rng() % 6, rows = 1 + rng() % 12;
    const double scale = trial % 10 == 0 ? 50.0 : 2.0;
    nd::ParamStore store;
    std::mt19937_64 init(static_cast<std::uint64_t>(trial));
    model::init_allocation(store, d_h, init);
    toy::scramble(store, rng, 1.5);
    const auto h = toy::random_tensor(rng, nd::Shape{rows, 2 * d_h}, -scale, scale);
    nd::Tape tape;
    const auto a = model::allocate(tape, store, tape.constant(h));
    const auto& beta = a.beta->tensor();
    const auto& hc = a.hc.tensor();
    const auto& hd = a.hd.tensor();
    for (std::size_t r = 0; r < rows; ++r) {
      sum_err = std::max(sum_err, std::abs(beta(r, 0) + beta(r, 1) - 1.0));
      std::vector<double> row(h.cols());
      for (std::size_t c = 0; c < h.cols(); ++c) {
        row[c] = h(r, c);
        recon_err = std::max(recon_err, std::abs(hc(r, c) + hd(r, c) - h(r, c)));
      }
      const auto [bc, bd] = oracle::allocation_beta(store, row);
      oracle_err = std::max({oracle_err, std::abs(bc - beta(r, 0)), std::abs(bd - beta(r, 1))});
      ++rows_checked;
    }
  }
  return verdict(sum_err <= 1e-9 && recon_err <= 1e-9 && oracle_err <= 1e-9,
                 fmt("1000 inputs / %zu rows: |sum beta - 1| %.1e, |Hc+Hd-H| %.1e, |beta - loop| %.1e (tol 1e-9)",
                     rows_checked, sum_err, recon_err, oracle_err));
}

// ------------------------------------------------------------------ 4

Outcome alternation_hygiene() {
  corpus::SyntheticSpec spec;
  spec.seed = 4;
  spec.source.primary_count = spec.target.primary_count = 64;
  spec.source.heldout_count = spec.target.heldout_count = 8;
  const auto c = corpus::generate_synthetic(spec);
  trainer::TrainData data{c.source_train, c.source_test, c.target_unlabeled};
  std::size_t steps = 0, violations = 0, stale = 0;
  for (auto v : {Variant::difd, Variant::difd_ca, Variant::asc_at}) {
    trainer::RunConfig cfg;
    cfg.variant = v;
    cfg.d_e = 8;
    cfg.d_h = 4;
    cfg.lr = 0.05;
    auto m = trainer::initial_model(data, cfg);
    std::mt19937_64 order(9);
    std::vector<corpus::Batch> src, tgt;
    for (std::size_t k = 0; k < 100; ++k) {
      if (k % 4 == 0) {
        src = corpus::make_batches(data.source_train, m.vocab, 16, order(), true);
        tgt = corpus::make_batches(data.target, m.vocab, 16, order(), true);
      }
      const nd::ParamStore before = m.store;
      nd::ParamStore after_a;
      int calls = 0;
      trainer::train_step(m.store, m.config, cfg, src[k % 4], &tgt[k % 4], [&](char sub, const nd::ParamStore& s) {
        ++calls;
        if (sub == 'a') {
          if (!nd::partition_equal(before, s, nd::Partition::domain_classifier)) ++violations;
          if (nd::partition_equal(before, s, nd::Partition::feature_extractor)) ++stale;
          after_a = s;
        } else {
          if (!nd::partition_equal(after_a, s, nd::Partition::feature_extractor)) ++violations;
          if (nd::partition_equal(after_a, s, nd::Partition::domain_classifier)) ++stale;
        }
      });
      if (calls != 2) ++violations;
      ++steps;
    }
  }
  return verdict(violations == 0 && stale == 0,
                 fmt("%zu steps (difd, difd-ca, asc-at x 100): %zu frozen-partition changes, %zu sub-steps without an update",
                     steps, violations, stale));
}

// ------------------------------------------------------------------ 5

Outcome overfit_sanity() {
  const auto t0 = Clock::now();
  corpus::SyntheticSpec spec;
  spec.seed = 5;
  spec.source.primary_count = 32;
  spec.source.heldout_count = 1;
  spec.target.primary_count = spec.target.heldout_count = 1;
  const auto c = corpus::generate_synthetic(spec);
  trainer::TrainData data{c.source_train, c.source_train, {}};
  trainer::RunConfig cfg;
  cfg.variant = Variant::source_only;
  cfg.d_e = 16;
  cfg.d_h = 8;
  cfg.lr = 0.1;
  cfg.batch_size = 8;
  cfg.seed = 1;
  auto m = trainer::initial_model(data, cfg);
  std::mt19937_64 order(cfg.seed);
  double acc = 0.0, tag_acc = 0.0;
  std::size_t epoch = 0;
  for (epoch = 1; epoch <= 500; ++epoch) {
    for (const auto& b : corpus::make_batches(data.source_train, m.vocab, cfg.batch_size, order(), true)) {
      trainer::train_step(m.store, m.config, cfg, b, nullptr);
    }
    acc = analysis::evaluate(m, data.source_train).accuracy;
    tag_acc = analysis::evaluate_tagging(m, data.source_train, Domain::source).token_accuracy;
    if (acc == 1.0 && tag_acc >= 0.95) break;
  }
  const double secs = seconds_since(t0);
  const bool ok = acc == 1.0 && tag_acc >= 0.95 && epoch <= 500 && secs < 300.0;
  return verdict(ok, fmt("source-only, 32 instances, d_e=16 d_h=8: epoch %zu, train acc %.4f, tag acc %.4f (need 1 and >= 0.95 "
                         "within 500), %.1f s < 300 s",
                         std::min<std::size_t>(epoch, 500), acc, tag_acc, secs));
}

// ------------------------------------------------------------------ 6, 7, 10

struct TransferRun {
  std::uint64_t seed = 0;
  Variant variant = Variant::difd;
  double target_accuracy = 0.0;
  double target_macro_f1 = 0.0;
  std::size_t best_epoch = 0;
  std::size_t epochs = 0;
  double seconds = 0.0;
  std::optional<model::Model> best;
};

struct TransferStudy {
  std::size_t seeds = 5;
  std::vector<TransferRun> runs;
  std::map<std::uint64_t, corpus::SyntheticCorpora> corpora;
  std::map<std::uint64_t, corpus::SyntheticSpec> specs;
};

corpus::SyntheticSpec transfer_spec(std::uint64_t seed) {
  corpus::SyntheticSpec spec;
  spec.seed = seed;
  spec.aspect_overlap = 0.0;
  spec.source.primary_count = spec.target.primary_count = 2000;
  spec.source.heldout_count = spec.target.heldout_count = 400;
  return spec;
}

trainer::RunConfig transfer_config(Variant v, std::uint64_t seed) {
  trainer::RunConfig cfg;
  cfg.variant = v;
  cfg.seed = seed;
  cfg.lambda_a = cfg.lambda_d = 1.0;
  cfg.lr = 0.1;
  cfg.patience = 30;
  cfg.max_epochs = 120;
  return cfg;
}

const TransferStudy& transfer_study(std::size_t seeds) {
  static std::optional<TransferStudy> study;
  if (study) return *study;
  study.emplace();
  study->seeds = seeds;
  for (std::uint64_t seed = 1; seed <= seeds; ++seed) {
    study->specs[seed] = transfer_spec(seed);
    const auto& c = study->corpora[seed] = corpus::generate_synthetic(study->specs[seed]);
    const trainer::TrainData data{c.source_train, c.source_test, c.target_unlabeled};
    for (auto v : {Variant::source_only, Variant::asc_at, Variant::difd}) {
      const auto t0 = Clock::now();
      auto r = trainer::fit(data, transfer_config(v, seed));
      TransferRun run;
      run.seed = seed;
      run.variant = v;
      run.seconds = seconds_since(t0);
      run.best_epoch = r.best_epoch;
      run.epochs = r.history.size();
      const auto rep = analysis::evaluate(r.best, c.target_gold);
      run.target_accuracy = rep.accuracy;
      run.target_macro_f1 = rep.macro_f1;
      if (v == Variant::difd) run.best = std::move(r.best);
      std::fprintf(stderr, "  seed %llu %-11s target acc %.4f f1 %.4f best epoch %zu/%zu %.0f s\n",
                   static_cast<unsigned long long>(seed), std::string(model::to_string(v)).c_str(), run.target_accuracy,
                   run.target_macro_f1, run.best_epoch, run.epochs, run.seconds);
      study->runs.push_back(std::move(run));
    }
  }
  return *study;
}

Outcome transfer_ordering(std::size_t seeds) {
  const auto& st = transfer_study(seeds);
  std::map<Variant, double> mean;
  double slowest = 0.0;
  for (const auto& r : st.runs) {
    mean[r.variant] += 100.0 * r.target_accuracy / static_cast<double>(st.seeds);
    slowest = std::max(slowest, r.seconds);
  }
  const double difd = mean[Variant::difd], at = mean[Variant::asc_at], so = mean[Variant::source_only];
  const bool ok = difd > at && at > so && difd - so >= 2.0 && slowest < 900.0;
  return verdict(ok, fmt("mean target acc over %zu seeds: difd %.2f, asc-at %.2f, source-only %.2f (need difd > asc-at > "
                         "source-only, difd - source-only = %+.2f >= 2); slowest run %.0f s < 900 s",
                         st.seeds, difd, at, so, difd - so, slowest));
}

std::vector<std::vector<double>> gaussian_rows(std::mt19937_64& rng, std::size_t n, std::size_t d) {
  std::normal_distribution<double> n01;
  std::vector<std::vector<double>> rows(n, std::vector<double>(d));
  for (auto& r : rows) {
    for (auto& x : r) x = n01(rng);
  }
  return rows;
}

/// Both domains drawn from one 4-d standard normal, n=400, labels alternating.
double null_a_distance(std::uint64_t data_seed, std::uint64_t probe_seed) {
  std::mt19937_64 rng(data_seed);
  const auto x = gaussian_rows(rng, 400, 4);
  std::vector<int> y(400);
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = static_cast<int>(i % 2);
  return analysis::proxy_a_distance(x, y, 5, probe_seed).mean;
}

Outcome a_distance_properties(std::size_t seeds) {
  const double null = null_a_distance(2, 3);
  // How often the bound holds over other draws, for context only.
  std::size_t null_within = 0;
  for (std::uint64_t s = 100; s < 200; ++s) null_within += std::abs(null_a_distance(s, s)) < 0.15;
  std::mt19937_64 rng(77);
  std::normal_distribution<double> n01;
  // Separable: two clouds 20 apart with unit noise.
  std::vector<std::vector<double>> xs;
  std::vector<int> ys;
  for (std::size_t i = 0; i < 400; ++i) {
    const int d = static_cast<int>(i % 2);
    xs.push_back({n01(rng) + (d ? 10.0 : -10.0), n01(rng)});
    ys.push_back(d);
  }
  const auto sep = analysis::proxy_a_distance(xs, ys, 5, 2);

  const auto& st = transfer_study(seeds);
  std::size_t wins = 0;
  std::string per_seed;
  for (const auto& r : st.runs) {
    if (r.variant != Variant::difd) continue;
    auto m = *r.best;
    const auto& c = st.corpora.at(r.seed);
    std::vector<corpus::Instance> both = c.source_test;
    both.insert(both.end(), c.target_gold.begin(), c.target_gold.end());
    const auto inv = analysis::extract_features(m, both, analysis::FeatureKind::invariant);
    const auto spc = analysis::extract_features(m, both, analysis::FeatureKind::specific);
    const double a_f = analysis::proxy_a_distance(inv.rows, inv.domain_labels(), 5, r.seed).mean;
    const double a_h = analysis::proxy_a_distance(spc.rows, spc.domain_labels(), 5, r.seed).mean;
    if (a_f < a_h) ++wins;
    per_seed += fmt(" [%llu] %.3f vs %.3f", static_cast<unsigned long long>(r.seed), a_f, a_h);
  }
  const std::size_t needed = seeds >= 5 ? 4 : seeds;
  const bool ok = std::abs(null) < 0.15 && sep.mean == 2.0 && wins >= needed;
  return verdict(ok, fmt("null |a| %.3f < 0.15 (bound holds for %zu/100 other draws); separable a %.3f == 2; a(f) < a(mean Hd) in "
                         "%zu/%zu seeds (need %zu):",
                         std::abs(null), null_within, sep.mean, wins, seeds, needed) +
                         per_seed);
}

Outcome ca_qualitative(std::size_t seeds) {
  const auto& st = transfer_study(seeds);
  double aspect_sum = 0.0, opinion_sum = 0.0;
  std::size_t aspect_n = 0, opinion_n = 0, seed_wins = 0;
  std::string per_seed;
  for (const auto& r : st.runs) {
    if (r.variant != Variant::difd) continue;
    auto m = *r.best;
    const auto& c = st.corpora.at(r.seed);
    std::set<std::string> opinions;
    for (const auto& words : st.specs.at(r.seed).opinions) opinions.insert(words.begin(), words.end());
    std::vector<corpus::Instance> both = c.source_test;
    both.insert(both.end(), c.target_gold.begin(), c.target_gold.end());
    std::map<std::string, const corpus::Instance*> by_sentence;
    for (const auto& inst : both) by_sentence.emplace(inst.sentence_id, &inst);
    double as = 0.0, os = 0.0;
    std::size_t an = 0, on = 0;
    for (const auto& rec : analysis::export_beta(m, both)) {
      const auto* inst = by_sentence.at(rec.sentence_id);
      if (inst->tags[rec.position] != corpus::Tag::O) {
        as += rec.beta_d;
        ++an;
      } else if (opinions.count(rec.token)) {
        os += rec.beta_d;
        ++on;
      }
    }
    if (as / an > os / on) ++seed_wins;
    per_seed += fmt(" [%llu] %.3f vs %.3f", static_cast<unsigned long long>(r.seed), as / an, os / on);
    aspect_sum += as;
    opinion_sum += os;
    aspect_n += an;
    opinion_n += on;
  }
  const double a = aspect_sum / aspect_n, o = opinion_sum / opinion_n;
  return verdict(a > o, fmt("mean beta_d on aspect tokens %.4f vs opinion tokens %.4f over %zu difd models (%zu/%zu seeds "
                            "individually):",
                            a, o, seeds, seed_wins, seeds) +
                            per_seed);
}

// ------------------------------------------------------------------ 8

Outcome loader_fidelity() {
  const char* dir = std::getenv("DIFD_SEMEVAL_DIR");
  if (!dir) return {Status::skip, "DIFD_SEMEVAL_DIR not set"};
  const std::pair<const char*, std::size_t> expected[] = {
      {"Restaurants_Train.xml", 3502}, {"Restaurants_Test_Gold.xml", 1120}, {"Laptops_Train.xml", 2313}, {"Laptops_Test_Gold.xml", 638}};
  bool ok = true;
  std::string detail;
  for (const auto& [name, want] : expected) {
    const fs::path p = fs::path(dir) / name;
    if (!fs::exists(p)) return {Status::skip, p.string() + " not found"};
    const auto got = corpus::load_semeval_xml(p).stats.instances();
    ok = ok && got == want;
    detail += fmt(" %s %zu/%zu", name, got, want);
  }
  return verdict(ok, "instances got/expected:" + detail);
}

// ------------------------------------------------------------------ 9

Outcome determinism() {
  corpus::SyntheticSpec spec;
  spec.seed = 9;
  spec.source.primary_count = spec.target.primary_count = 96;
  spec.source.heldout_count = spec.target.heldout_count = 32;
  const auto c = corpus::generate_synthetic(spec);
  const trainer::TrainData data{c.source_train, c.source_test, c.target_unlabeled};
  const fs::path root = fs::temp_directory_path() / ("difd_acceptance_" + std::to_string(::getpid()));
  std::vector<std::string> differing;
  std::size_t compared = 0;
  for (auto v : {Variant::difd, Variant::difd_at_coral}) {
    trainer::RunConfig cfg;
    cfg.variant = v;
    cfg.d_e = 8;
    cfg.d_h = 4;
    cfg.max_epochs = 4;
    cfg.seed = 11;
    const std::string name(model::to_string(v));
    for (const char* run : {"a", "b"}) {
      trainer::write_run_dir(root / name / run, trainer::to_json(cfg), trainer::fit(data, cfg));
    }
    for (const char* file : {"config.json", "history.jsonl", "best.ckpt", "final.ckpt"}) {
      ++compared;
      if (nd::read_file(root / name / "a" / file) != nd::read_file(root / name / "b" / file)) differing.push_back(name + "/" + file);
    }
  }
  fs::remove_all(root);
  std::string detail = fmt("%zu file pairs from repeated runs compared byte for byte", compared);
  for (const auto& d : differing) detail += "; differs: " + d;
  return verdict(differing.empty(), detail);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance criteria"};
  std::vector<int> only;
  std::size_t seeds = 5;
  app.add_option("--only", only, "Criteria to run (default all)")->delimiter(',')->check(CLI::Range(1, 10));
  app.add_option("--seeds", seeds, "Seeds for the transfer criteria (6, 7, 10)")->capture_default_str()->check(CLI::PositiveNumber);
  CLI11_PARSE(app, argc, argv);

  const std::map<int, std::pair<std::string, std::function<Outcome()>>> criteria{
      {1, {"gradient correctness", gradient_correctness}},
      {2, {"equation oracles", equation_oracles}},
      {3, {"CA invariants", ca_invariants}},
      {4, {"alternation hygiene", alternation_hygiene}},
      {5, {"overfit sanity", overfit_sanity}},
      {6, {"directional transfer", [&] { return transfer_ordering(seeds); }}},
      {7, {"A-distance properties", [&] { return a_distance_properties(seeds); }}},
      {8, {"loader fidelity", loader_fidelity}},
      {9, {"determinism", determinism}},
      {10, {"CA qualitative export", [&] { return ca_qualitative(seeds); }}},
  };
  const std::set<int> selected(only.begin(), only.end());
  int failures = 0;
  for (const auto& [id, entry] : criteria) {
    if (!selected.empty() && !selected.count(id)) continue;
    std::fprintf(stderr, "criterion %d: %s\n", id, entry.first.c_str());
    Outcome o;
    try {
      o = entry.second();
    } catch (const std::exception& e) {
      o = {Status::fail, std::string("error: ") + e.what()};
    }
    const char* tag = o.status == Status::pass ? "PASS" : o.status == Status::fail ? "FAIL" : "SKIP";
    std::printf("%s %2d %s: %s\n", tag, id, entry.first.c_str(), o.detail.c_str());
    std::fflush(stdout);
    if (o.status == Status::fail) ++failures;
  }
  return failures == 0 ? 0 : 1;
}
