#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <vector>

#include <json.hpp>

#include "difd/error.hpp"

namespace difd::analysis {

struct ProbeOptions {
  std::size_t epochs = 500;
  double reg = 1e-3;
  double train_fraction = 0.8;
};

struct ProbeResult {
  std::vector<double> epsilon;
  std::vector<double> a_distance;
  double mean = 0.0;  // of a_distance
  double std = 0.0;   // sample standard deviation; 0 for one repeat
  double mean_epsilon = 0.0;
  std::size_t repeats = 0;
};

/// Linear hinge-loss classifier (bias via a constant feature) trained by
/// Pegasos-style subgradient steps with lr 1/(reg*t). Labels are +1/-1.
inline std::vector<double> fit_linear_probe(const std::vector<std::vector<double>>& x, const std::vector<int>& y,
                                            const std::vector<std::size_t>& order, const ProbeOptions& opt) {
  const std::size_t d = x.front().size() + 1;
  std::vector<double> w(d, 0.0);
  double t = 0.0;
  for (std::size_t epoch = 0; epoch < opt.epochs; ++epoch) {
    for (auto i : order) {
      t += 1.0;
      const double eta = 1.0 / (opt.reg * t);
      double score = w[d - 1];
      for (std::size_t k = 0; k + 1 < d; ++k) score += w[k] * x[i][k];
      const double shrink = 1.0 - eta * opt.reg;
      for (auto& v : w) v *= shrink;
      if (y[i] * score < 1.0) {
        for (std::size_t k = 0; k + 1 < d; ++k) w[k] += eta * y[i] * x[i][k];
        w[d - 1] += eta * y[i];
      }
    }
  }
  return w;
}

inline double a_distance(double epsilon) { return 2.0 * (1.0 - 2.0 * epsilon); }

/// Error rate of the probe `w` (bias last) on `rows`. A score of exactly 0
/// counts as half an error.
inline double held_out_error(const std::vector<double>& w, const std::vector<std::vector<double>>& x, const std::vector<int>& y,
                             const std::vector<std::size_t>& rows) {
  const std::size_t dim = w.size() - 1;
  double errors = 0.0;
  for (auto i : rows) {
    double score = w[dim];
    for (std::size_t k = 0; k < dim; ++k) score += w[k] * x[i][k];
    const double margin = y[i] * score;
    errors += margin < 0.0 ? 1.0 : margin == 0.0 ? 0.5 : 0.0;
  }
  return errors / static_cast<double>(rows.size());
}

/// Proxy A-distance 2(1 - 2 eps), eps being the held-out error of a linear
/// domain probe on a stratified split. `domain` holds 0/1 per row.
inline ProbeResult proxy_a_distance(const std::vector<std::vector<double>>& features, const std::vector<int>& domain,
                                    std::size_t repeats, std::uint64_t seed, const ProbeOptions& opt = {}) {
  if (features.size() != domain.size()) fail(ErrorKind::shape, "proxy_a_distance: feature and label counts differ");
  if (repeats == 0) fail(ErrorKind::usage, "proxy_a_distance: repeats must be >= 1");
  std::size_t ones = 0;
  for (int d : domain) {
    if (d != 0 && d != 1) fail(ErrorKind::data, "proxy_a_distance: domain labels must be 0 or 1");
    ones += static_cast<std::size_t>(d);
  }
  if (ones == 0 || ones == domain.size()) fail(ErrorKind::data, "proxy_a_distance: both domains must be present");
  const std::size_t dim = features.front().size();
  for (const auto& row : features) {
    if (row.size() != dim) fail(ErrorKind::shape, "proxy_a_distance: ragged feature matrix");
  }

  ProbeResult result;
  result.repeats = repeats;
  std::mt19937_64 rng(seed);
  const std::size_t n = features.size();
  for (std::size_t rep = 0; rep < repeats; ++rep) {
    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    std::shuffle(perm.begin(), perm.end(), rng);

    // Within each class, the first train_fraction (in permutation order) trains.
    std::vector<char> is_train(n, 0);
    for (int cls = 0; cls < 2; ++cls) {
      std::vector<std::size_t> members;
      for (auto i : perm) {
        if (domain[i] == cls) members.push_back(i);
      }
      std::size_t n_train = static_cast<std::size_t>(std::llround(opt.train_fraction * static_cast<double>(members.size())));
      n_train = std::clamp<std::size_t>(n_train, 1, members.size() > 1 ? members.size() - 1 : 1);
      for (std::size_t k = 0; k < n_train; ++k) is_train[members[k]] = 1;
    }
    std::vector<std::size_t> train, test;
    for (auto i : perm) (is_train[i] ? train : test).push_back(i);
    if (test.empty()) fail(ErrorKind::data, "proxy_a_distance: too few rows for a held-out split");

    // Standardize with training statistics.
    std::vector<double> mu(dim, 0.0), sd(dim, 0.0);
    for (auto i : train) {
      for (std::size_t k = 0; k < dim; ++k) mu[k] += features[i][k];
    }
    for (auto& m : mu) m /= static_cast<double>(train.size());
    for (auto i : train) {
      for (std::size_t k = 0; k < dim; ++k) sd[k] += (features[i][k] - mu[k]) * (features[i][k] - mu[k]);
    }
    for (auto& s : sd) {
      s = std::sqrt(s / static_cast<double>(train.size()));
      if (s == 0.0) s = 1.0;
    }
    std::vector<std::vector<double>> z(n, std::vector<double>(dim));
    std::vector<int> y(n);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t k = 0; k < dim; ++k) z[i][k] = (features[i][k] - mu[k]) / sd[k];
      y[i] = domain[i] == 1 ? 1 : -1;
    }

    const double eps = held_out_error(fit_linear_probe(z, y, train, opt), z, y, test);
    result.epsilon.push_back(eps);
    result.a_distance.push_back(a_distance(eps));
  }
  const double r = static_cast<double>(repeats);
  result.mean = std::accumulate(result.a_distance.begin(), result.a_distance.end(), 0.0) / r;
  result.mean_epsilon = std::accumulate(result.epsilon.begin(), result.epsilon.end(), 0.0) / r;
  if (repeats > 1) {
    double ss = 0.0;
    for (double a : result.a_distance) ss += (a - result.mean) * (a - result.mean);
    result.std = std::sqrt(ss / (r - 1.0));
  }
  return result;
}

inline nlohmann::ordered_json to_json(const ProbeResult& r) {
  return {{"repeats", r.repeats},
          {"epsilon", r.epsilon},
          {"a_distance", r.a_distance},
          {"mean_epsilon", r.mean_epsilon},
          {"mean", r.mean},
          {"std", r.std}};
}

}  // namespace difd::analysis
