#pragma once

#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <limits>
#include <memory>
#include <vector>

#include "cplae/core/error.hpp"
#include "cplae/core/gemm.hpp"
#include "cplae/core/ops.hpp"
#include "cplae/core/tensor.hpp"

namespace cplae {

struct Conv2dGeometry {
  std::size_t batch, in_channels, height, width;
  std::size_t filters, kh, kw;
  std::size_t stride, padding;
  std::size_t out_h, out_w;

  std::size_t patch() const { return in_channels * kh * kw; }
  std::size_t out_area() const { return out_h * out_w; }
};

namespace detail {

template <typename T>
void im2col(const Conv2dGeometry& g, const T* img, T* cols) {
  const std::size_t area = g.out_area();
  for (std::size_t c = 0; c < g.in_channels; ++c)
    for (std::size_t ki = 0; ki < g.kh; ++ki)
      for (std::size_t kj = 0; kj < g.kw; ++kj) {
        T* row = cols + ((c * g.kh + ki) * g.kw + kj) * area;
        for (std::size_t oy = 0; oy < g.out_h; ++oy) {
          const long iy = static_cast<long>(oy * g.stride + ki) - static_cast<long>(g.padding);
          for (std::size_t ox = 0; ox < g.out_w; ++ox) {
            const long ix = static_cast<long>(ox * g.stride + kj) - static_cast<long>(g.padding);
            const bool inside = iy >= 0 && ix >= 0 && iy < static_cast<long>(g.height) && ix < static_cast<long>(g.width);
            row[oy * g.out_w + ox] = inside ? img[(c * g.height + iy) * g.width + ix] : T(0);
          }
        }
      }
}

template <typename T>
void col2im(const Conv2dGeometry& g, const T* cols, T* img) {
  const std::size_t area = g.out_area();
  for (std::size_t c = 0; c < g.in_channels; ++c)
    for (std::size_t ki = 0; ki < g.kh; ++ki)
      for (std::size_t kj = 0; kj < g.kw; ++kj) {
        const T* row = cols + ((c * g.kh + ki) * g.kw + kj) * area;
        for (std::size_t oy = 0; oy < g.out_h; ++oy) {
          const long iy = static_cast<long>(oy * g.stride + ki) - static_cast<long>(g.padding);
          if (iy < 0 || iy >= static_cast<long>(g.height)) continue;
          for (std::size_t ox = 0; ox < g.out_w; ++ox) {
            const long ix = static_cast<long>(ox * g.stride + kj) - static_cast<long>(g.padding);
            if (ix < 0 || ix >= static_cast<long>(g.width)) continue;
            img[(c * g.height + iy) * g.width + ix] += row[oy * g.out_w + ox];
          }
        }
      }
}

}  // namespace detail

/// 2-D cross-correlation (no kernel flip). input [B×C×H×W], kernel [F×C×kh×kw],
/// optional bias [F]. Output [B×F×H'×W'] with H' = (H + 2p − kh)/stride + 1.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& kernel, const Tensor<T>& bias = {}, std::size_t stride = 1,
                 std::size_t padding = 0) {
  if (input.rank() != 4 || kernel.rank() != 4)
    throw DimensionError("conv2d expects rank-4 input and kernel, got " + shape_str(input.shape()) + " and " +
                         shape_str(kernel.shape()));
  if (stride == 0) throw DimensionError("conv2d stride must be >= 1");
  if (kernel.dim(1) != input.dim(1))
    throw DimensionError("conv2d channel mismatch: input " + shape_str(input.shape()) + ", kernel " +
                         shape_str(kernel.shape()));
  Conv2dGeometry g{input.dim(0), input.dim(1), input.dim(2), input.dim(3), kernel.dim(0), kernel.dim(2), kernel.dim(3),
                   stride,        padding,      0,             0};
  if (g.kh > g.height + 2 * padding || g.kw > g.width + 2 * padding)
    throw DimensionError("conv2d kernel " + shape_str(kernel.shape()) + " larger than padded input " +
                         shape_str(input.shape()));
  g.out_h = (g.height + 2 * padding - g.kh) / stride + 1;
  g.out_w = (g.width + 2 * padding - g.kw) / stride + 1;
  const bool has_bias = bias.defined();
  if (has_bias && (bias.rank() != 1 || bias.dim(0) != g.filters))
    throw DimensionError("conv2d bias must have shape (" + std::to_string(g.filters) + ")");

  const std::size_t patch = g.patch(), area = g.out_area();
  const std::size_t in_img = g.in_channels * g.height * g.width;
  auto cols = std::make_shared<std::vector<T>>(g.batch * patch * area);
  std::vector<T> out(g.batch * g.filters * area, T(0));
  const T* x = input.values().data();
  const T* w = kernel.values().data();
  for (std::size_t b = 0; b < g.batch; ++b) {
    T* cb = cols->data() + b * patch * area;
    detail::im2col(g, x + b * in_img, cb);
    T* ob = out.data() + b * g.filters * area;
    if (has_bias)
      for (std::size_t f = 0; f < g.filters; ++f) std::fill_n(ob + f * area, area, bias[f]);
    gemm::nn(g.filters, area, patch, w, cb, ob);
  }
  std::vector<std::shared_ptr<Node<T>>> parents{input.node(), kernel.node()};
  if (has_bias) parents.push_back(bias.node());
  return make_result<T>("conv2d", {g.batch, g.filters, g.out_h, g.out_w}, std::move(out), std::move(parents),
                        [g, cols, in_img](Node<T>& node) {
                          auto& px = *node.parents[0];
                          auto& pw = *node.parents[1];
                          const std::size_t patch = g.patch(), area = g.out_area();
                          std::vector<T> dcols;
                          if (px.requires_grad) dcols.resize(patch * area);
                          for (std::size_t b = 0; b < g.batch; ++b) {
                            const T* gb = node.grad.data() + b * g.filters * area;
                            if (pw.requires_grad)
                              gemm::nt(g.filters, patch, area, gb, cols->data() + b * patch * area,
                                       pw.grad_buffer().data());
                            if (px.requires_grad) {
                              std::fill(dcols.begin(), dcols.end(), T(0));
                              gemm::tn(patch, area, g.filters, pw.data.data(), gb, dcols.data());
                              detail::col2im(g, dcols.data(), px.grad_buffer().data() + b * in_img);
                            }
                          }
                          if (node.parents.size() > 2 && node.parents[2]->requires_grad) {
                            auto& gbias = node.parents[2]->grad_buffer();
                            for (std::size_t b = 0; b < g.batch; ++b)
                              for (std::size_t f = 0; f < g.filters; ++f) {
                                const T* gp = node.grad.data() + (b * g.filters + f) * area;
                                T acc = 0;
                                for (std::size_t i = 0; i < area; ++i) acc += gp[i];
                                gbias[f] += acc;
                              }
                          }
                        });
}

/// Non-overlapping max pooling with window = stride = size; trailing rows or
/// columns that do not fill a window are dropped.
template <typename T>
Tensor<T> maxpool2d(const Tensor<T>& input, std::size_t size = 2) {
  if (input.rank() != 4) throw DimensionError("maxpool2d expects rank-4 input");
  const std::size_t B = input.dim(0), C = input.dim(1), H = input.dim(2), W = input.dim(3);
  const std::size_t Ho = H / size, Wo = W / size;
  if (Ho == 0 || Wo == 0) throw DimensionError("maxpool2d window larger than input " + shape_str(input.shape()));
  const auto& x = input.values();
  std::vector<T> out(B * C * Ho * Wo);
  auto arg = std::make_shared<std::vector<std::size_t>>(out.size());
  for (std::size_t bc = 0; bc < B * C; ++bc)
    for (std::size_t oy = 0; oy < Ho; ++oy)
      for (std::size_t ox = 0; ox < Wo; ++ox) {
        std::size_t best = bc * H * W + (oy * size) * W + ox * size;
        for (std::size_t dy = 0; dy < size; ++dy)
          for (std::size_t dx = 0; dx < size; ++dx) {
            const std::size_t i = bc * H * W + (oy * size + dy) * W + ox * size + dx;
            if (x[i] > x[best]) best = i;
          }
        const std::size_t o = (bc * Ho + oy) * Wo + ox;
        out[o] = x[best];
        (*arg)[o] = best;
      }
  return make_result<T>("maxpool2d", {B, C, Ho, Wo}, std::move(out), {input.node()}, [arg](Node<T>& node) {
    auto& g = node.parents[0]->grad_buffer();
    for (std::size_t o = 0; o < arg->size(); ++o) g[(*arg)[o]] += node.grad[o];
  });
}

/// [B×C×H×W] -> [B×C] spatial mean.
template <typename T>
Tensor<T> global_avg_pool(const Tensor<T>& input) {
  if (input.rank() != 4) throw DimensionError("global_avg_pool expects rank-4 input");
  return mean(input, {2, 3});
}

/// Per-channel batch normalization over (B, H, W). In training mode the batch
/// statistics normalize the input (biased variance) and the running buffers
/// are updated in place with the unbiased variance; in eval mode only the
/// running buffers are read.
template <typename T>
Tensor<T> batchnorm2d(const Tensor<T>& input, const Tensor<T>& gamma, const Tensor<T>& beta, Tensor<T>& running_mean,
                      Tensor<T>& running_var, bool training, T momentum = T(0.1), T eps = T(1e-5)) {
  if (input.rank() != 4) throw DimensionError("batchnorm2d expects rank-4 input");
  const std::size_t B = input.dim(0), C = input.dim(1), HW = input.dim(2) * input.dim(3);
  for (const Tensor<T>* t : std::initializer_list<const Tensor<T>*>{&gamma, &beta, &running_mean, &running_var})
    if (t->rank() != 1 || t->dim(0) != C) throw DimensionError("batchnorm2d parameter shape mismatch");
  const std::size_t count = B * HW;
  const auto& x = input.values();
  auto xhat = std::make_shared<std::vector<T>>(x.size());
  auto inv_std = std::make_shared<std::vector<T>>(C);
  std::vector<T> out(x.size());
  for (std::size_t c = 0; c < C; ++c) {
    T mu, var;
    if (training) {
      T acc = 0;
      for (std::size_t b = 0; b < B; ++b)
        for (std::size_t i = 0; i < HW; ++i) acc += x[(b * C + c) * HW + i];
      mu = acc / static_cast<T>(count);
      T sq = 0;
      for (std::size_t b = 0; b < B; ++b)
        for (std::size_t i = 0; i < HW; ++i) {
          const T d = x[(b * C + c) * HW + i] - mu;
          sq += d * d;
        }
      var = sq / static_cast<T>(count);
      const T unbiased = count > 1 ? sq / static_cast<T>(count - 1) : var;
      auto rm = running_mean.mutable_data();
      auto rv = running_var.mutable_data();
      rm[c] = (T(1) - momentum) * rm[c] + momentum * mu;
      rv[c] = (T(1) - momentum) * rv[c] + momentum * unbiased;
    } else {
      mu = running_mean[c];
      var = running_var[c];
    }
    const T is = T(1) / std::sqrt(var + eps);
    (*inv_std)[c] = is;
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t i = 0; i < HW; ++i) {
        const std::size_t k = (b * C + c) * HW + i;
        (*xhat)[k] = (x[k] - mu) * is;
        out[k] = gamma[c] * (*xhat)[k] + beta[c];
      }
  }
  return make_result<T>(
      "batchnorm2d", input.shape(), std::move(out), {input.node(), gamma.node(), beta.node()},
      [B, C, HW, count, training, xhat, inv_std](Node<T>& node) {
        auto& px = *node.parents[0];
        auto& pg = *node.parents[1];
        auto& pb = *node.parents[2];
        for (std::size_t c = 0; c < C; ++c) {
          T sum_g = 0, sum_gx = 0;
          for (std::size_t b = 0; b < B; ++b)
            for (std::size_t i = 0; i < HW; ++i) {
              const std::size_t k = (b * C + c) * HW + i;
              sum_g += node.grad[k];
              sum_gx += node.grad[k] * (*xhat)[k];
            }
          if (pg.requires_grad) pg.grad_buffer()[c] += sum_gx;
          if (pb.requires_grad) pb.grad_buffer()[c] += sum_g;
          if (!px.requires_grad) continue;
          auto& gx = px.grad_buffer();
          const T gam = pg.data[c], is = (*inv_std)[c];
          const T n = static_cast<T>(count);
          for (std::size_t b = 0; b < B; ++b)
            for (std::size_t i = 0; i < HW; ++i) {
              const std::size_t k = (b * C + c) * HW + i;
              if (training)
                gx[k] += gam * is * (node.grad[k] - sum_g / n - (*xhat)[k] * sum_gx / n);
              else
                gx[k] += gam * is * node.grad[k];
            }
        }
      });
}

}  // namespace cplae
