#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "cplae/core/error.hpp"
#include "cplae/core/ops.hpp"
#include "cplae/core/rng.hpp"
#include "cplae/nn/projection.hpp"

namespace cplae::method {

// ---------------------------------------------------------------------------
// Prototypes and the few-shot loss
// ---------------------------------------------------------------------------

/// Row c is the mean of the support rows labelled c, summed in support order.
template <typename T>
Tensor<T> compute_prototypes(const Tensor<T>& support, const std::vector<std::size_t>& labels, std::size_t n,
                             std::size_t k) {
  if (support.rank() != 2 || support.dim(0) != labels.size())
    throw DimensionError("support embeddings " + shape_str(support.shape()) + " do not match " +
                         std::to_string(labels.size()) + " labels");
  std::vector<std::vector<std::size_t>> rows(n);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] >= n) throw ContractError("support label " + std::to_string(labels[i]) + " outside 0.." + std::to_string(n - 1));
    rows[labels[i]].push_back(i);
  }
  std::vector<Tensor<T>> protos;
  for (std::size_t c = 0; c < n; ++c) {
    if (rows[c].size() != k)
      throw ContractError("class " + std::to_string(c) + " has " + std::to_string(rows[c].size()) +
                          " support samples, expected k = " + std::to_string(k));
    protos.push_back(mean(index_select(support, rows[c]), {0}, true));
  }
  return concat(protos, 0);
}

struct FslOptions {
  bool squared_distance = true;
  bool divide_by_q_only = false;  // literal 1/q normalization instead of 1/(n·q)
};

template <typename T>
struct FslResult {
  Tensor<T> loss;
  std::vector<double> posteriors;  // row-major [queries × n]
};

/// Cross-entropy of softmax(−d) over prototypes, d squared Euclidean by default.
template <typename T>
FslResult<T> fsl_loss(const Tensor<T>& query, const Tensor<T>& prototypes, const std::vector<std::size_t>& labels,
                      const FslOptions& opt = {}) {
  const std::size_t nq = query.dim(0), n = prototypes.dim(0);
  if (labels.size() != nq) throw DimensionError("query labels do not match query embeddings");
  auto d = pairwise_sqeuclidean(query, prototypes);
  if (!opt.squared_distance) d = sqrt(d);
  auto lp = log_softmax(neg(d), 1);
  std::vector<T> onehot(nq * n, T(0));
  for (std::size_t i = 0; i < nq; ++i) {
    if (labels[i] >= n) throw ContractError("query label " + std::to_string(labels[i]) + " has no prototype");
    onehot[i * n + labels[i]] = T(1);
  }
  const double denom = opt.divide_by_q_only ? static_cast<double>(nq) / static_cast<double>(n) : static_cast<double>(nq);
  auto loss = scale(sum(mul(lp, Tensor<T>({nq, n}, std::move(onehot)))), static_cast<T>(-1.0 / denom));
  FslResult<T> out{loss, {}};
  for (T v : lp.values()) out.posteriors.push_back(std::exp(static_cast<double>(v)));
  return out;
}

/// argmin over prototypes of squared distance; ties go to the lowest index.
template <typename T>
std::vector<std::size_t> classify_queries(const Tensor<T>& query, const Tensor<T>& prototypes) {
  NoGradGuard guard;
  auto d = pairwise_sqeuclidean(query, prototypes);
  const std::size_t nq = d.dim(0), n = d.dim(1);
  std::vector<std::size_t> pred(nq, 0);
  for (std::size_t i = 0; i < nq; ++i)
    for (std::size_t c = 1; c < n; ++c)
      if (d[i * n + c] < d[i * n + pred[i]]) pred[i] = c;
  return pred;
}

// ---------------------------------------------------------------------------
// Contrastive prototype loss
// ---------------------------------------------------------------------------

enum class AnchorMode { prototype, support_sample };

inline std::string to_string(AnchorMode m) { return m == AnchorMode::prototype ? "prototype" : "support_sample"; }

inline AnchorMode anchor_mode_from_string(const std::string& s) {
  if (s == "prototype") return AnchorMode::prototype;
  if (s == "support_sample") return AnchorMode::support_sample;
  throw ConfigError("anchor_mode must be \"prototype\" or \"support_sample\", got \"" + s + "\"");
}

struct CplConfig {
  double temperature = 1.0;
  std::size_t negatives = 6;  // m, drawn from each other class
  double lambda = 0.1;
  AnchorMode anchor_mode = AnchorMode::prototype;
  bool use_projection = true;
  bool shuffle_queries = true;
  bool random_shuffle = false;  // per-episode random order of the augmented tokens

  void validate(std::size_t q = 0) const {
    if (!(temperature > 0)) throw ConfigError("cplae.temperature must be > 0");
    if (negatives < 1) throw ConfigError("cplae.negatives (m) must be >= 1");
    if (!(lambda >= 0)) throw ConfigError("cplae.lambda must be >= 0");
    if (q && negatives > q)
      throw ConfigError("cplae.negatives m = " + std::to_string(negatives) + " exceeds queries per class q = " +
                        std::to_string(q));
  }
};

/// One contrastive term: anchor row, positive query, and the negative query
/// indices drawn for it (m from each other class).
struct CplTerm {
  std::size_t anchor = 0;
  std::size_t anchor_class = 0;
  std::size_t positive = 0;
  std::vector<std::size_t> negatives;
};

struct NegativePlan {
  std::size_t n = 0, q = 0, m = 0;
  std::vector<CplTerm> terms;
};

/// Draw order: class c ascending, each anchor of c in row order, each
/// positive of c in query order, then each other class ascending; m queries of
/// that class via a partial Fisher–Yates shuffle of its q positions.
/// `anchor_classes[a]` is the class of anchor row a.
inline NegativePlan sample_negative_plan(const std::vector<std::size_t>& anchor_classes,
                                         const std::vector<std::size_t>& query_labels, std::size_t n, std::size_t m,
                                         Rng& rng) {
  std::vector<std::vector<std::size_t>> by_class(n);
  for (std::size_t i = 0; i < query_labels.size(); ++i) {
    if (query_labels[i] >= n) throw ContractError("query label outside episode classes");
    by_class[query_labels[i]].push_back(i);
  }
  const std::size_t q = by_class.empty() ? 0 : by_class[0].size();
  for (const auto& v : by_class)
    if (v.size() != q) throw ContractError("contrastive loss needs the same number of queries in every class");
  if (m > q) throw ConfigError("cplae.negatives m = " + std::to_string(m) + " exceeds queries per class q = " + std::to_string(q));

  NegativePlan plan{n, q, m, {}};
  std::vector<std::size_t> pool(q);
  for (std::size_t c = 0; c < n; ++c)
    for (std::size_t a = 0; a < anchor_classes.size(); ++a) {
      if (anchor_classes[a] != c) continue;
      for (std::size_t pos : by_class[c]) {
        CplTerm term{a, c, pos, {}};
        for (std::size_t other = 0; other < n; ++other) {
          if (other == c) continue;
          for (std::size_t j = 0; j < q; ++j) pool[j] = j;
          for (std::size_t j = 0; j < m; ++j) {
            const std::size_t pick = j + static_cast<std::size_t>(rng.uniform_below(q - j));
            std::swap(pool[j], pool[pick]);
            term.negatives.push_back(by_class[other][pool[j]]);
          }
        }
        plan.terms.push_back(std::move(term));
      }
    }
  return plan;
}

/// Mean over plan terms of −log(s⁺ / (s⁺ + Σ s⁻)), with s = exp(cos(anchor,
/// h(query)) / T). Similarities are evaluated as exp((cos − 1)/T), which
/// leaves every ratio unchanged and cannot overflow.
/// `projection` may be null (identity h); with `project_anchor` the anchors go
/// through h as well.
template <typename T>
Tensor<T> cpl_loss(const Tensor<T>& anchors, const Tensor<T>& queries, const NegativePlan& plan,
                   const nn::ProjectionHead<T>* projection, double temperature, bool project_anchor = false) {
  if (plan.terms.empty()) throw ContractError("contrastive loss with an empty negative plan");
  const auto z = projection ? projection->forward(queries) : queries;
  const auto a = (projection && project_anchor) ? projection->forward(anchors) : anchors;
  if (a.dim(1) != z.dim(1))
    throw DimensionError("anchor dim " + std::to_string(a.dim(1)) + " differs from projected query dim " +
                         std::to_string(z.dim(1)));
  const auto sim = exp(scale(add_scalar(cosine_matrix(a, z), T(-1)), static_cast<T>(1.0 / temperature)));

  const std::size_t terms = plan.terms.size(), nq = z.dim(0);
  std::vector<std::size_t> rows;
  std::vector<T> pos_w(terms * nq, T(0)), neg_w(terms * nq, T(0));
  for (std::size_t r = 0; r < terms; ++r) {
    const auto& term = plan.terms[r];
    rows.push_back(term.anchor);
    pos_w[r * nq + term.positive] = T(1);
    for (auto t : term.negatives) neg_w[r * nq + t] += T(1);
  }
  const auto s = index_select(sim, rows);
  const auto pos = sum(mul(s, Tensor<T>({terms, nq}, std::move(pos_w))), {1});
  const auto negs = sum(mul(s, Tensor<T>({terms, nq}, std::move(neg_w))), {1});
  return mean(sub(log(add(pos, negs)), log(pos)));
}

/// L_fsl + λ·L_cpl
template <typename T>
Tensor<T> total_loss(const Tensor<T>& l_fsl, const Tensor<T>& l_cpl, double lambda) {
  if (!(lambda >= 0)) throw ConfigError("lambda must be >= 0");
  return add(l_fsl, scale(l_cpl, static_cast<T>(lambda)));
}

}  // namespace cplae::method
