#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "difd/error.hpp"
#include "difd/ndgrad/param_store.hpp"
#include "difd/ndgrad/tape.hpp"

namespace difd::ndgrad {

/// Builds a scalar loss on the given tape, reading parameters from a store
/// the closure holds by reference. Must be deterministic.
using LossClosure = std::function<Value(Tape&)>;

struct GradCheckOptions {
  double step = 1e-5;
  /// Lower bound on the relative-error denominator so that gradients which
  /// are zero up to rounding do not produce spurious failures.
  double denominator_floor = 1e-6;
  PartitionSet partitions = PartitionSet::all();
  /// Negative control: perturb the backward rule of one op.
  std::optional<Op> corrupt;
};

struct ParamCheck {
  std::string name;
  double max_rel_error = 0.0;
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  std::size_t checked = 0;
};

struct GradCheckReport {
  double tolerance = 0.0;
  double loss = 0.0;
  std::vector<ParamCheck> params;

  bool passed() const {
    return std::all_of(params.begin(), params.end(),
                       [&](const ParamCheck& p) { return p.max_rel_error < tolerance; });
  }

  std::vector<std::string> failing() const {
    std::vector<std::string> out;
    for (const auto& p : params) {
      if (!(p.max_rel_error < tolerance)) out.push_back(p.name);
    }
    return out;
  }

  double max_rel_error() const {
    double m = 0.0;
    for (const auto& p : params) m = std::max(m, p.max_rel_error);
    return m;
  }
};

inline double relative_error(double analytic, double numeric, double floor) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
  return std::abs(analytic - numeric) / denom;
}

/// Compares reverse-mode gradients against central differences
/// (L(p+h) - L(p-h)) / 2h for every scalar of every selected parameter.
inline GradCheckReport finite_diff_check(const LossClosure& closure, ParamStore& store, double tolerance,
                                         const GradCheckOptions& opt = {}) {
  auto eval = [&]() {
    Tape tape;
    const double v = closure(tape).item();
    if (!std::isfinite(v)) fail(ErrorKind::numeric, "finite_diff_check: non-finite loss");
    return v;
  };

  GradCheckReport report;
  report.tolerance = tolerance;

  store.zero_grad();
  {
    Tape tape;
    tape.corrupt_backward(opt.corrupt);
    Value loss = closure(tape);
    report.loss = loss.item();
    if (!std::isfinite(report.loss)) fail(ErrorKind::numeric, "finite_diff_check: non-finite loss");
    tape.backward(loss, store);
  }

  for (auto& p : store) {
    if (!opt.partitions.contains(p.partition)) continue;
    ParamCheck check;
    check.name = p.name;
    const std::size_t cols = p.value.cols();
    std::vector<char> frozen(p.value.rows(), 0);
    for (auto r : p.frozen_rows) frozen[r] = 1;
    const std::vector<double> analytic = p.has_grad() ? p.grad : std::vector<double>(p.value.size(), 0.0);

    for (std::size_t i = 0; i < p.value.size(); ++i) {
      if (frozen[i / cols]) continue;
      const double saved = p.value.data[i];
      p.value.data[i] = saved + opt.step;
      const double up = eval();
      p.value.data[i] = saved - opt.step;
      const double down = eval();
      p.value.data[i] = saved;
      const double numeric = (up - down) / (2.0 * opt.step);
      const double err = relative_error(analytic[i], numeric, opt.denominator_floor);
      ++check.checked;
      if (err > check.max_rel_error || check.checked == 1) {
        check.max_rel_error = err;
        check.worst_index = i;
        check.analytic = analytic[i];
        check.numeric = numeric;
      }
    }
    report.params.push_back(check);
  }
  store.zero_grad();
  return report;
}

}  // namespace difd::ndgrad
