#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "cplae/core/rng.hpp"
#include "cplae/core/tensor.hpp"
#include "cplae/nn/projection.hpp"

// Fully looped reference implementations of the episode losses.
namespace cplae::testing {

using T64 = Tensor<double>;

// h(x) = W2ᵀ relu(W1ᵀ x + b1) + b2, by explicit loops.
inline std::vector<double> oracle_projection(const nn::ProjectionHead<double>& h, const std::vector<double>& x) {
  auto& head = const_cast<nn::ProjectionHead<double>&>(h);
  const std::size_t in = h.in_dim(), hid = h.hidden_dim(), out = h.out_dim();
  std::vector<double> mid(hid), y(out);
  for (std::size_t j = 0; j < hid; ++j) {
    double acc = head.b1()[j];
    for (std::size_t i = 0; i < in; ++i) acc += x[i] * head.w1()[i * hid + j];
    mid[j] = std::max(acc, 0.0);
  }
  for (std::size_t j = 0; j < out; ++j) {
    double acc = head.b2()[j];
    for (std::size_t i = 0; i < hid; ++i) acc += mid[i] * head.w2()[i * out + j];
    y[j] = acc;
  }
  return y;
}

inline std::vector<double> row(const T64& t, std::size_t r) {
  const std::size_t d = t.dim(1);
  return {t.values().begin() + r * d, t.values().begin() + (r + 1) * d};
}

inline double oracle_cos(const std::vector<double>& a, const std::vector<double>& b) {
  double ab = 0, aa = 0, bb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ab += a[i] * b[i];
    aa += a[i] * a[i];
    bb += b[i] * b[i];
  }
  return ab / (std::sqrt(aa) * std::sqrt(bb));
}

inline double oracle_fsl(const T64& query, const T64& protos, const std::vector<std::size_t>& labels, bool squared = true) {
  double total = 0;
  for (std::size_t i = 0; i < query.dim(0); ++i) {
    double z = 0, num = 0;
    for (std::size_t c = 0; c < protos.dim(0); ++c) {
      double d = 0;
      for (std::size_t k = 0; k < query.dim(1); ++k) {
        const double diff = query[i * query.dim(1) + k] - protos[c * protos.dim(1) + k];
        d += diff * diff;
      }
      if (!squared) d = std::sqrt(d);
      z += std::exp(-d);
      if (c == labels[i]) num = std::exp(-d);
    }
    total += -std::log(num / z);
  }
  return total / query.dim(0);
}

// Replays the negative draws from `seed` in the documented order and
// evaluates every term with explicit loops.
inline double oracle_cpl(const T64& anchors, const std::vector<std::size_t>& anchor_classes, const T64& queries,
                  const std::vector<std::size_t>& query_labels, std::size_t n, std::size_t m, double temperature,
                  const nn::ProjectionHead<double>* h, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<std::vector<std::size_t>> members(n);
  for (std::size_t i = 0; i < query_labels.size(); ++i) members[query_labels[i]].push_back(i);
  const std::size_t q = members[0].size();
  std::vector<std::vector<double>> z;
  for (std::size_t i = 0; i < queries.dim(0); ++i) z.push_back(h ? oracle_projection(*h, row(queries, i)) : row(queries, i));
  double total = 0;
  std::size_t count = 0;
  for (std::size_t c = 0; c < n; ++c)
    for (std::size_t a = 0; a < anchor_classes.size(); ++a) {
      if (anchor_classes[a] != c) continue;
      const auto anchor = row(anchors, a);
      for (std::size_t pos : members[c]) {
        const double sim_pos = std::exp(oracle_cos(anchor, z[pos]) / temperature);
        double sim_neg = 0;
        for (std::size_t other = 0; other < n; ++other) {
          if (other == c) continue;
          std::vector<std::size_t> pool(q);
          for (std::size_t j = 0; j < q; ++j) pool[j] = j;
          for (std::size_t j = 0; j < m; ++j) {
            std::swap(pool[j], pool[j + rng.uniform_below(q - j)]);
            sim_neg += std::exp(oracle_cos(anchor, z[members[other][pool[j]]]) / temperature);
          }
        }
        total += -std::log(sim_pos / (sim_pos + sim_neg));
        ++count;
      }
    }
  return total / count;
}

}  // namespace cplae::testing
