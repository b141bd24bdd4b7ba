#pragma once

#include <string>

#include "cplae/core/error.hpp"
#include "cplae/core/grad_check.hpp"
#include "cplae/core/ops.hpp"
#include "cplae/nn/init.hpp"

namespace cplae::nn {

/// Contrastive projection head h: affine → relu → affine.
template <typename T>
class ProjectionHead {
 public:
  ProjectionHead() = default;

  ProjectionHead(std::size_t in_dim, std::size_t hidden_dim, std::size_t out_dim, Rng& rng)
      : in_(in_dim), hidden_(hidden_dim), out_(out_dim) {
    if (in_dim == 0 || hidden_dim == 0 || out_dim == 0) throw ConfigError("projection head dimensions must be positive");
    w1_ = kaiming_uniform<T>({in_dim, hidden_dim}, in_dim, kReluGain, rng);
    b1_ = Tensor<T>::zeros({hidden_dim}, true);
    w2_ = kaiming_uniform<T>({hidden_dim, out_dim}, hidden_dim, kLinearGain, rng);
    b2_ = Tensor<T>::zeros({out_dim}, true);
  }

  std::size_t in_dim() const { return in_; }
  std::size_t hidden_dim() const { return hidden_; }
  std::size_t out_dim() const { return out_; }

  /// x [N×in] -> [N×out], or [in] -> [out].
  Tensor<T> forward(const Tensor<T>& x) const {
    if (x.rank() == 1) return reshape(forward(reshape(x, {1, x.dim(0)})), {out_});
    if (x.rank() != 2 || x.dim(1) != in_)
      throw DimensionError("projection head expects input dim " + std::to_string(in_) + ", got " + shape_str(x.shape()));
    auto h = relu(add(matmul(x, w1_), b1_));
    return add(matmul(h, w2_), b2_);
  }

  NamedTensors<T> parameters(const std::string& prefix = "projection") const {
    return {{prefix + ".w1", w1_}, {prefix + ".b1", b1_}, {prefix + ".w2", w2_}, {prefix + ".b2", b2_}};
  }

  Tensor<T>& w1() { return w1_; }
  Tensor<T>& b1() { return b1_; }
  Tensor<T>& w2() { return w2_; }
  Tensor<T>& b2() { return b2_; }

 private:
  std::size_t in_ = 0, hidden_ = 0, out_ = 0;
  Tensor<T> w1_, b1_, w2_, b2_;
};

/// Plain affine classifier head, used by backbone pre-training.
template <typename T>
class LinearHead {
 public:
  LinearHead() = default;
  LinearHead(std::size_t in_dim, std::size_t classes, Rng& rng)
      : w_(kaiming_uniform<T>({in_dim, classes}, in_dim, kLinearGain, rng)), b_(Tensor<T>::zeros({classes}, true)) {}

  Tensor<T> forward(const Tensor<T>& x) const { return add(matmul(x, w_), b_); }
  NamedTensors<T> parameters(const std::string& prefix = "head") const {
    return {{prefix + ".w", w_}, {prefix + ".b", b_}};
  }

 private:
  Tensor<T> w_, b_;
};

}  // namespace cplae::nn
