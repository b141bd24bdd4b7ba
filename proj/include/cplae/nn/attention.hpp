#pragma once

#include <cmath>
#include <string>

#include "cplae/core/error.hpp"
#include "cplae/core/grad_check.hpp"
#include "cplae/core/ops.hpp"
#include "cplae/nn/init.hpp"

namespace cplae::nn {

/// Integration function for augmented embeddings: single-head scaled
/// dot-product self-attention over the per-sample token set (the original
/// view plus its augmentations), with learned D×D query/key/value maps and an
/// optional residual. No normalization, no output projection.
///
///   weights = softmax((X W_q)(X W_k)ᵀ / √D)   (rows sum to 1)
///   out     = weights · (X W_v) [+ X]
///
/// Token order is preserved: output token j corresponds to input token j.
template <typename T>
class AttentionIntegrator {
 public:
  AttentionIntegrator() = default;

  AttentionIntegrator(std::size_t dim, std::size_t token_count, bool residual, Rng& rng)
      : dim_(dim), tokens_(token_count), residual_(residual) {
    if (dim == 0) throw ConfigError("attention dimension must be positive");
    if (token_count < 2) throw ConfigError("attention needs at least 2 tokens");
    w_q_ = kaiming_uniform<T>({dim, dim}, dim, kLinearGain, rng);
    w_k_ = kaiming_uniform<T>({dim, dim}, dim, kLinearGain, rng);
    w_v_ = kaiming_uniform<T>({dim, dim}, dim, kLinearGain, rng);
  }

  std::size_t dim() const { return dim_; }
  std::size_t token_count() const { return tokens_; }
  bool residual() const { return residual_; }

  /// Attention weights [N×t×t] for tokens [N×t×D].
  Tensor<T> weights(const Tensor<T>& tokens) const {
    check(tokens);
    const std::size_t n = tokens.dim(0);
    auto flat = reshape(tokens, {n * tokens_, dim_});
    auto q = reshape(matmul(flat, w_q_), {n, tokens_, dim_});
    auto k = reshape(matmul(flat, w_k_), {n, tokens_, dim_});
    auto scores = scale(matmul(q, transpose(k)), static_cast<T>(1.0 / std::sqrt(static_cast<double>(dim_))));
    return softmax(scores, 2);
  }

  /// tokens [N×t×D] (or a single sample [t×D]) -> same shape.
  Tensor<T> forward(const Tensor<T>& tokens) const {
    if (tokens.rank() == 2) return reshape(forward(reshape(tokens, {1, tokens.dim(0), tokens.dim(1)})), tokens.shape());
    check(tokens);
    const std::size_t n = tokens.dim(0);
    auto attn = weights(tokens);
    auto v = reshape(matmul(reshape(tokens, {n * tokens_, dim_}), w_v_), {n, tokens_, dim_});
    auto out = matmul(attn, v);
    return residual_ ? add(out, tokens) : out;
  }

  NamedTensors<T> parameters(const std::string& prefix = "attention") const {
    return {{prefix + ".w_q", w_q_}, {prefix + ".w_k", w_k_}, {prefix + ".w_v", w_v_}};
  }

  Tensor<T>& w_q() { return w_q_; }
  Tensor<T>& w_k() { return w_k_; }
  Tensor<T>& w_v() { return w_v_; }

 private:
  void check(const Tensor<T>& tokens) const {
    if (tokens.rank() != 3) throw DimensionError("attention expects [N×t×D] tokens, got " + shape_str(tokens.shape()));
    if (tokens.dim(1) != tokens_)
      throw ContractError("attention integrator expects exactly " + std::to_string(tokens_) + " tokens, got " +
                          std::to_string(tokens.dim(1)));
    if (tokens.dim(2) != dim_)
      throw DimensionError("attention token dimension " + std::to_string(tokens.dim(2)) + " != " + std::to_string(dim_));
  }

  std::size_t dim_ = 0;
  std::size_t tokens_ = 4;
  bool residual_ = true;
  Tensor<T> w_q_, w_k_, w_v_;
};

}  // namespace cplae::nn
