#pragma once

#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "difd/error.hpp"
#include "difd/ndgrad/param_store.hpp"

namespace difd::ndgrad {

struct SgdOptions {
  double lr = 0.01;
  /// Global-norm clip threshold, applied separately to each partition.
  std::optional<double> clip_norm = 5.0;
  double momentum = 0.0;
};

struct SgdReport {
  /// Pre-clipping global gradient norm per partition (index = Partition value).
  double grad_norm[2] = {0.0, 0.0};
  double scale[2] = {1.0, 1.0};
};

/// p <- p - lr * g for every parameter in `partitions`, after rescaling each
/// partition's gradients so their global L2 norm is at most clip_norm.
/// Parameters outside `partitions` are not touched. Consumed gradients are
/// cleared.
inline SgdReport sgd_step(ParamStore& store, PartitionSet partitions, const SgdOptions& opt) {
  if (!(opt.lr > 0.0)) fail(ErrorKind::usage, "sgd_step: learning rate must be positive");
  if (opt.clip_norm && !(*opt.clip_norm > 0.0)) fail(ErrorKind::usage, "sgd_step: clip_norm must be positive");
  if (opt.momentum < 0.0 || opt.momentum >= 1.0) fail(ErrorKind::usage, "sgd_step: momentum must be in [0, 1)");

  std::vector<std::string> missing;
  for (const auto& p : store) {
    if (partitions.contains(p.partition) && !p.has_grad()) missing.push_back(p.name);
  }
  if (!missing.empty()) {
    std::string msg = "sgd_step: missing gradients for";
    for (const auto& name : missing) msg += " " + name;
    fail(ErrorKind::usage, msg);
  }

  SgdReport report;
  for (int part = 0; part < 2; ++part) {
    const auto which = static_cast<Partition>(part);
    if (!partitions.contains(which)) continue;
    double sq = 0.0;
    for (const auto& p : store) {
      if (p.partition != which) continue;
      for (double g : p.grad) sq += g * g;
    }
    const double norm = std::sqrt(sq);
    if (!std::isfinite(norm)) fail(ErrorKind::numeric, "sgd_step: non-finite gradient norm");
    report.grad_norm[part] = norm;
    if (opt.clip_norm && norm > *opt.clip_norm) report.scale[part] = *opt.clip_norm / norm;
  }

  for (auto& p : store) {
    if (!partitions.contains(p.partition)) continue;
    const double scale = report.scale[static_cast<int>(p.partition)];
    const std::size_t cols = p.value.cols();
    std::vector<char> frozen(p.value.rows(), 0);
    for (auto r : p.frozen_rows) frozen[r] = 1;
    if (opt.momentum > 0.0 && p.velocity.empty()) p.velocity.assign(p.value.size(), 0.0);
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      if (frozen[i / cols]) continue;
      double step = scale * p.grad[i];
      if (opt.momentum > 0.0) {
        p.velocity[i] = opt.momentum * p.velocity[i] + step;
        step = p.velocity[i];
      }
      p.value.data[i] -= opt.lr * step;
    }
    p.grad.clear();
  }
  return report;
}

}  // namespace difd::ndgrad
