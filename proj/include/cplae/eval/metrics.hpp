#pragma once

#include <cmath>
#include <cstdio>
#include <map>
#include <string>
#include <vector>

#include "cplae/core/error.hpp"

namespace cplae::eval {

inline double mean_of(const std::vector<double>& xs) {
  if (xs.empty()) throw ContractError("mean of an empty list");
  double s = 0;
  for (double x : xs) s += x;
  return s / static_cast<double>(xs.size());
}

/// 95% half-width 1.96·σ/√N with the sample (N−1) deviation; 0 when N = 1.
inline double ci95_halfwidth(const std::vector<double>& xs) {
  const std::size_t n = xs.size();
  if (n < 2) return 0.0;
  const double m = mean_of(xs);
  double ss = 0;
  for (double x : xs) ss += (x - m) * (x - m);
  return 1.96 * std::sqrt(ss / static_cast<double>(n - 1)) / std::sqrt(static_cast<double>(n));
}

/// "5-way 5-shot: 74.31 ± 0.34", from fractions.
inline std::string format_accuracy(std::size_t n, std::size_t k, double mean, double ci) {
  char buf[96];
  std::snprintf(buf, sizeof buf, "%zu-way %zu-shot: %.2f ± %.2f", n, k, 100.0 * mean, 100.0 * ci);
  return buf;
}

/// Davies–Bouldin index of the rows of `x` (N × dim, row-major) grouped by
/// `labels`. Lower means tighter, better separated clusters.
inline double davies_bouldin(const std::vector<double>& x, std::size_t dim, const std::vector<std::size_t>& labels) {
  if (dim == 0 || x.size() != labels.size() * dim)
    throw DimensionError("davies_bouldin: " + std::to_string(x.size()) + " values do not form " +
                         std::to_string(labels.size()) + " rows of width " + std::to_string(dim));
  std::map<std::size_t, std::vector<std::size_t>> members;
  for (std::size_t i = 0; i < labels.size(); ++i) members[labels[i]].push_back(i);
  const std::size_t k = members.size();
  if (k < 2) throw ContractError("davies_bouldin needs at least 2 clusters, got " + std::to_string(k));

  std::vector<std::vector<double>> centroid;
  std::vector<double> scatter;
  for (const auto& [label, rows] : members) {
    std::vector<double> c(dim, 0.0);
    for (auto r : rows)
      for (std::size_t j = 0; j < dim; ++j) c[j] += x[r * dim + j];
    for (auto& v : c) v /= static_cast<double>(rows.size());
    double s = 0;
    for (auto r : rows) {
      double d2 = 0;
      for (std::size_t j = 0; j < dim; ++j) d2 += (x[r * dim + j] - c[j]) * (x[r * dim + j] - c[j]);
      s += std::sqrt(d2);
    }
    scatter.push_back(s / static_cast<double>(rows.size()));
    centroid.push_back(std::move(c));
  }

  double total = 0;
  for (std::size_t i = 0; i < k; ++i) {
    double worst = 0;
    for (std::size_t j = 0; j < k; ++j) {
      if (i == j) continue;
      double d2 = 0;
      for (std::size_t t = 0; t < dim; ++t) d2 += (centroid[i][t] - centroid[j][t]) * (centroid[i][t] - centroid[j][t]);
      const double dist = std::sqrt(d2);
      if (dist == 0) throw DomainError("davies_bouldin: clusters " + std::to_string(i) + " and " + std::to_string(j) + " have coincident centroids");
      worst = std::max(worst, (scatter[i] + scatter[j]) / dist);
    }
    total += worst;
  }
  return total / static_cast<double>(k);
}

}  // namespace cplae::eval
