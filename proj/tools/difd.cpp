#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "difd/difd.hpp"

namespace fs = std::filesystem;
namespace nd = difd::ndgrad;
using difd::ErrorKind;
using difd::fail;

namespace {

void write_out(const fs::path& path, const std::string& bytes) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  nd::write_file_atomic(path, bytes);
}

nlohmann::json read_json_file(const fs::path& path, ErrorKind kind) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::data, "cannot open " + path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    fail(kind, path.string() + ": " + e.what());
  }
}

std::string canonical_or_self(const fs::path& p) {
  std::error_code ec;
  auto c = fs::weakly_canonical(p, ec);
  return ec ? p.string() : c.string();
}

difd::corpus::Domain domain_flag(const std::string& s) {
  if (s == "source") return difd::corpus::Domain::source;
  if (s == "target") return difd::corpus::Domain::target;
  fail(ErrorKind::usage, "--domain must be source or target");
}

// ---- generate ----

struct GenerateArgs {
  std::string spec;
  std::string out;
};

int run_generate(const GenerateArgs& a) {
  const auto spec = difd::corpus::synthetic_spec_from_json(read_json_file(a.spec, ErrorKind::data));
  const auto c = difd::corpus::generate_synthetic(spec);
  const fs::path out(a.out);
  fs::create_directories(out);
  write_out(out / "source_train.jsonl", difd::corpus::to_jsonl(c.source_train));
  write_out(out / "source_test.jsonl", difd::corpus::to_jsonl(c.source_test));
  write_out(out / "target_unlabeled.jsonl", difd::corpus::to_jsonl(c.target_unlabeled));
  write_out(out / "target_gold.jsonl", difd::corpus::to_jsonl(c.target_gold));
  auto stats = difd::corpus::corpus_stats({{"source_train", &c.source_train},
                                           {"source_test", &c.source_test},
                                           {"target_unlabeled", &c.target_unlabeled},
                                           {"target_gold", &c.target_gold}});
  stats["spec"] = difd::corpus::to_json(spec);
  write_out(out / "stats.json", stats.dump(2) + "\n");
  std::cerr << "wrote " << c.source_train.size() << " + " << c.source_test.size() << " source and "
            << c.target_unlabeled.size() << " + " << c.target_gold.size() << " target instances to " << out.string() << "\n";
  return 0;
}

// ---- convert ----

struct ConvertArgs {
  std::string format;
  std::string in;
  std::string domain = "source";
  std::string out;
  std::string stats;
};

int run_convert(const ConvertArgs& a) {
  const auto domain = domain_flag(a.domain);
  std::vector<difd::corpus::Instance> instances;
  nlohmann::ordered_json stats;
  if (a.format == "semeval") {
    auto r = difd::corpus::load_semeval_xml(a.in, domain);
    instances = std::move(r.instances);
    stats = difd::corpus::to_json(r.stats);
  } else {
    std::ifstream in(a.in);
    if (!in) fail(ErrorKind::data, "cannot open " + a.in);
    instances = a.format == "twitter" ? difd::corpus::convert_twitter(in, domain, a.in) : difd::corpus::parse_jsonl(in, a.in);
    if (a.format == "jsonl") {
      for (auto& inst : instances) inst.domain = domain;
    }
    stats = difd::corpus::corpus_stats({{"instances", &instances}})["splits"]["instances"];
  }
  write_out(a.out, difd::corpus::to_jsonl(instances));
  if (!a.stats.empty()) write_out(a.stats, stats.dump(2) + "\n");
  std::cerr << "wrote " << instances.size() << " instances to " << a.out << "\n";
  return 0;
}

// ---- train ----

struct TrainArgs {
  std::string config;
  std::string source;
  std::string valid;
  std::string target;
  std::string variant;
  std::optional<std::uint64_t> seed;
  std::optional<double> lr, lambda_a, lambda_d, clip_norm;
  std::optional<std::size_t> max_epochs, patience, batch_size, d_e, d_h;
  std::string embeddings;
  std::string export_beta;
  std::string out;
  bool quiet = false;
};

/// Every tenth distinct sentence of the source training file, in file order.
void split_validation(std::vector<difd::corpus::Instance>& train, std::vector<difd::corpus::Instance>& valid) {
  std::map<std::string, std::size_t> rank;
  std::vector<difd::corpus::Instance> keep;
  for (auto& inst : train) {
    const auto it = rank.emplace(inst.sentence_id, rank.size()).first;
    (it->second % 10 == 9 ? valid : keep).push_back(std::move(inst));
  }
  train = std::move(keep);
}

int run_train(const TrainArgs& a) {
  difd::trainer::RunConfig cfg;
  if (!a.config.empty()) cfg = difd::trainer::run_config_from_json(read_json_file(a.config, ErrorKind::usage), cfg);
  if (!a.variant.empty()) cfg.variant = difd::model::variant_from_string(a.variant);
  if (a.seed) cfg.seed = *a.seed;
  if (a.lr) cfg.lr = *a.lr;
  if (a.lambda_a) cfg.lambda_a = *a.lambda_a;
  if (a.lambda_d) cfg.lambda_d = *a.lambda_d;
  if (a.clip_norm) cfg.clip_norm = *a.clip_norm > 0.0 ? a.clip_norm : std::nullopt;
  if (a.max_epochs) cfg.max_epochs = *a.max_epochs;
  if (a.patience) cfg.patience = *a.patience;
  if (a.batch_size) cfg.batch_size = *a.batch_size;
  if (a.d_e) cfg.d_e = *a.d_e;
  if (a.d_h) cfg.d_h = *a.d_h;
  if (!a.embeddings.empty()) cfg.embedding_file = a.embeddings;
  cfg.validate();

  const auto mcfg = cfg.model();
  const auto vname = std::string(difd::model::to_string(cfg.variant));
  if (mcfg.uses_target() && a.target.empty()) fail(ErrorKind::usage, "variant " + vname + " needs --target");
  if (!mcfg.uses_target() && !a.target.empty()) fail(ErrorKind::usage, "variant " + vname + " trains without target data; drop --target");

  difd::trainer::TrainData data;
  data.source_train = difd::corpus::load_jsonl(a.source);
  if (a.valid.empty()) {
    split_validation(data.source_train, data.source_valid);
  } else {
    data.source_valid = difd::corpus::load_jsonl(a.valid);
  }
  if (!a.target.empty()) data.target = difd::corpus::load_jsonl(a.target);

  difd::trainer::FitHooks hooks;
  if (!a.quiet) {
    hooks.on_epoch = [](const difd::trainer::EpochRecord& r, difd::model::Model&) {
      std::fprintf(stderr, "epoch %zu loss %.4f sentiment %.4f valid_acc %.4f%s\n", r.epoch, r.mean_parts.total,
                   r.mean_parts.sentiment, r.valid_accuracy, r.improved ? " *" : "");
    };
  }
  auto result = difd::trainer::fit(data, cfg, hooks);
  const nlohmann::json paths = {{"source", canonical_or_self(a.source)},
                                {"valid", a.valid.empty() ? nlohmann::json(nullptr) : nlohmann::json(canonical_or_self(a.valid))},
                                {"target", a.target.empty() ? nlohmann::json(nullptr) : nlohmann::json(canonical_or_self(a.target))}};
  result.best.info["data"] = paths;
  result.final.info["data"] = paths;

  const fs::path out(a.out);
  difd::trainer::write_run_dir(out, difd::trainer::to_json(cfg), result);
  if (!a.export_beta.empty()) {
    const auto records = difd::analysis::export_beta(result.best, difd::corpus::load_jsonl(a.export_beta));
    std::ostringstream csv;
    difd::model::write_beta_csv(csv, records);
    write_out(out / "beta_export.csv", csv.str());
  }
  std::cerr << "best epoch " << result.best_epoch << " valid_acc " << result.best_accuracy << "; run written to " << out.string()
            << "\n";
  return 0;
}

// ---- eval ----

struct EvalArgs {
  std::string ckpt;
  std::string data;
  std::string out;
};

void warn_if_training_data(const difd::model::Model& m, const std::string& data) {
  const auto& info = m.info;
  if (!info.contains("data") || !info["data"].is_object()) return;
  const auto src = info["data"].value("source", nlohmann::json(nullptr));
  if (src.is_string() && src.get<std::string>() == canonical_or_self(data)) {
    std::cerr << "warning: " << data << " is the training split of this checkpoint\n";
  }
}

int run_eval(const EvalArgs& a) {
  auto m = difd::model::load_model(a.ckpt);
  warn_if_training_data(m, a.data);
  const auto report = difd::analysis::evaluate(m, difd::corpus::load_jsonl(a.data));
  write_out(a.out, difd::analysis::to_json(report).dump(2) + "\n");
  std::cerr << "accuracy " << report.accuracy << " macro_f1 " << report.macro_f1 << "\n";
  return 0;
}

// ---- probe ----

struct ProbeArgs {
  std::string ckpt;
  std::string source_data;
  std::string target_data;
  std::string kind = "invariant";
  std::size_t repeats = 5;
  std::uint64_t seed = 1;
  std::string out;
  std::string features;
};

int run_probe(const ProbeArgs& a) {
  const auto kind = difd::analysis::feature_kind_from_string(a.kind);
  auto m = difd::model::load_model(a.ckpt);
  // Domain labels come from which file an instance was read from.
  auto fs_src = difd::analysis::extract_features(m, difd::corpus::load_jsonl(a.source_data), kind);
  auto fs_tgt = difd::analysis::extract_features(m, difd::corpus::load_jsonl(a.target_data), kind);
  difd::analysis::FeatureSet all;
  for (auto* part : {&fs_src, &fs_tgt}) {
    const auto d = part == &fs_src ? difd::corpus::Domain::source : difd::corpus::Domain::target;
    for (std::size_t i = 0; i < part->rows.size(); ++i) {
      all.rows.push_back(std::move(part->rows[i]));
      all.ids.push_back(std::move(part->ids[i]));
      all.domains.push_back(d);
    }
  }
  const auto r = difd::analysis::proxy_a_distance(all.rows, all.domain_labels(), a.repeats, a.seed);
  auto j = difd::analysis::to_json(r);
  j["kind"] = a.kind;
  j["instances"] = {{"source", fs_src.rows.size()}, {"target", fs_tgt.rows.size()}};
  write_out(a.out, j.dump(2) + "\n");
  if (!a.features.empty()) {
    std::ostringstream csv;
    difd::analysis::write_features_csv(csv, all);
    write_out(a.features, csv.str());
  }
  std::cerr << "a_distance " << r.mean << " +- " << r.std << " over " << r.repeats << " repeats\n";
  return 0;
}

// ---- export-ca ----

struct ExportArgs {
  std::string ckpt;
  std::string data;
  std::string out;
};

int run_export(const ExportArgs& a) {
  auto m = difd::model::load_model(a.ckpt);
  const auto records = difd::analysis::export_beta(m, difd::corpus::load_jsonl(a.data));
  std::ostringstream csv;
  difd::model::write_beta_csv(csv, records);
  write_out(a.out, csv.str());
  std::cerr << "wrote " << records.size() << " token rows to " << a.out << "\n";
  return 0;
}

// ---- gradcheck ----

struct GradcheckArgs {
  std::string scale = "tiny";
  std::string variant = "difd";
  std::string corrupt_op;
  std::uint64_t seed = 1;
  double tolerance = 1e-4;
};

int run_gradcheck(const GradcheckArgs& a) {
  if (a.scale != "tiny") fail(ErrorKind::usage, "--scale: only 'tiny' is supported");
  difd::trainer::TinyGradcheckOptions opt;
  opt.variant = difd::model::variant_from_string(a.variant);
  opt.seed = a.seed;
  opt.tolerance = a.tolerance;
  if (!a.corrupt_op.empty()) {
    opt.corrupt = nd::op_from_string(a.corrupt_op);
    if (!opt.corrupt) fail(ErrorKind::usage, "--corrupt-op: unknown op '" + a.corrupt_op + "'");
  }
  const auto report = difd::trainer::tiny_gradcheck(opt);
  for (const auto& p : report.params) {
    std::printf("%s %-28s max_rel_error %.3e (%zu entries)\n", p.max_rel_error < report.tolerance ? "PASS" : "FAIL",
                p.name.c_str(), p.max_rel_error, p.checked);
  }
  const bool ok = report.passed();
  std::printf("%s gradcheck variant=%s max_rel_error %.3e tolerance %.0e", ok ? "PASS" : "FAIL", a.variant.c_str(),
              report.max_rel_error(), report.tolerance);
  if (opt.corrupt) std::printf(" corrupted op=%s", a.corrupt_op.c_str());
  std::printf("\n");
  return ok ? 0 : static_cast<int>(ErrorKind::numeric);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Domain-invariant feature distillation for cross-domain aspect sentiment"};
  app.require_subcommand(1);

  GenerateArgs gen;
  auto* c_gen = app.add_subcommand("generate", "Write a synthetic source/target corpus");
  c_gen->add_option("--spec", gen.spec, "Generator spec JSON")->required()->check(CLI::ExistingFile);
  c_gen->add_option("--out", gen.out, "Output directory")->required();

  ConvertArgs conv;
  auto* c_conv = app.add_subcommand("convert", "Convert SemEval XML, Twitter or JSONL input to instance JSONL");
  c_conv->add_option("--format", conv.format, "Input format")->required()->check(CLI::IsMember({"semeval", "twitter", "jsonl"}));
  c_conv->add_option("--in", conv.in, "Input file")->required()->check(CLI::ExistingFile);
  c_conv->add_option("--domain", conv.domain, "Domain label for the instances (source|target)")->capture_default_str();
  c_conv->add_option("--out", conv.out, "Output JSONL")->required();
  c_conv->add_option("--stats", conv.stats, "Also write load statistics JSON here");

  TrainArgs tr;
  auto* c_train = app.add_subcommand("train", "Train one variant and write a run directory");
  c_train->add_option("--config", tr.config, "Run config JSON (flags override it)")->check(CLI::ExistingFile);
  c_train->add_option("--source", tr.source, "Labeled source JSONL")->required()->check(CLI::ExistingFile);
  c_train->add_option("--valid", tr.valid, "Source validation JSONL (default: every tenth source sentence)")
      ->check(CLI::ExistingFile);
  c_train->add_option("--target", tr.target, "Unlabeled target JSONL")->check(CLI::ExistingFile);
  c_train->add_option("--variant", tr.variant, "difd, difd-s, difd-ca, difd-at, asc-at, difd-at+mmd, difd-at+coral, source-only");
  c_train->add_option("--seed", tr.seed, "Run seed");
  c_train->add_option("--lr", tr.lr, "Learning rate");
  c_train->add_option("--lambda-a", tr.lambda_a, "Weight of the adversarial / alignment term");
  c_train->add_option("--lambda-d", tr.lambda_d, "Weight of the aspect-detection terms");
  c_train->add_option("--clip-norm", tr.clip_norm, "Per-partition gradient norm clip (0 disables)");
  c_train->add_option("--max-epochs", tr.max_epochs, "Epoch limit");
  c_train->add_option("--patience", tr.patience, "Early-stopping patience in epochs");
  c_train->add_option("--batch-size", tr.batch_size, "Mini-batch size");
  c_train->add_option("--d-e", tr.d_e, "Embedding width (even)");
  c_train->add_option("--d-h", tr.d_h, "LSTM hidden width per direction");
  c_train->add_option("--embeddings", tr.embeddings, "Pretrained embeddings text file")->check(CLI::ExistingFile);
  c_train->add_option("--export-beta", tr.export_beta, "Write beta_export.csv for this JSONL with the best model")
      ->check(CLI::ExistingFile);
  c_train->add_option("--out", tr.out, "Run directory")->required();
  c_train->add_flag("--quiet", tr.quiet, "No per-epoch progress");

  EvalArgs ev;
  auto* c_eval = app.add_subcommand("eval", "Sentiment metrics of a checkpoint on labeled JSONL");
  c_eval->add_option("--ckpt", ev.ckpt, "Checkpoint")->required()->check(CLI::ExistingFile);
  c_eval->add_option("--data", ev.data, "Labeled JSONL")->required()->check(CLI::ExistingFile);
  c_eval->add_option("--out", ev.out, "Report JSON")->required();

  ProbeArgs pr;
  auto* c_probe = app.add_subcommand("probe", "Proxy A-distance between source and target features");
  c_probe->add_option("--ckpt", pr.ckpt, "Checkpoint")->required()->check(CLI::ExistingFile);
  c_probe->add_option("--source-data", pr.source_data, "Source JSONL")->required()->check(CLI::ExistingFile);
  c_probe->add_option("--target-data", pr.target_data, "Target JSONL")->required()->check(CLI::ExistingFile);
  c_probe->add_option("--kind", pr.kind, "invariant or specific")->capture_default_str();
  c_probe->add_option("--repeats", pr.repeats, "Probe repeats")->capture_default_str()->check(CLI::PositiveNumber);
  c_probe->add_option("--seed", pr.seed, "Split seed")->capture_default_str();
  c_probe->add_option("--out", pr.out, "Result JSON")->required();
  c_probe->add_option("--features", pr.features, "Also write the feature matrix CSV here");

  ExportArgs ex;
  auto* c_export = app.add_subcommand("export-ca", "Per-token allocation weights as CSV");
  c_export->add_option("--ckpt", ex.ckpt, "Checkpoint")->required()->check(CLI::ExistingFile);
  c_export->add_option("--data", ex.data, "JSONL")->required()->check(CLI::ExistingFile);
  c_export->add_option("--out", ex.out, "CSV")->required();

  GradcheckArgs gc;
  auto* c_gc = app.add_subcommand("gradcheck", "Finite-difference check of the full model");
  c_gc->add_option("--scale", gc.scale, "Only 'tiny'")->capture_default_str();
  c_gc->add_option("--variant", gc.variant, "Variant to check")->capture_default_str();
  c_gc->add_option("--corrupt-op", gc.corrupt_op, "Perturb the backward rule of this op (negative control)");
  c_gc->add_option("--seed", gc.seed, "Parameter seed")->capture_default_str();
  c_gc->add_option("--tolerance", gc.tolerance, "Max relative error")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : static_cast<int>(ErrorKind::usage);
  }

  try {
    if (c_gen->parsed()) return run_generate(gen);
    if (c_conv->parsed()) return run_convert(conv);
    if (c_train->parsed()) return run_train(tr);
    if (c_eval->parsed()) return run_eval(ev);
    if (c_probe->parsed()) return run_probe(pr);
    if (c_export->parsed()) return run_export(ex);
    if (c_gc->parsed()) return run_gradcheck(gc);
  } catch (const difd::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return static_cast<int>(e.kind());
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return static_cast<int>(ErrorKind::data);
  } catch (const fs::filesystem_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return static_cast<int>(ErrorKind::data);
  }
  return static_cast<int>(ErrorKind::usage);
}
