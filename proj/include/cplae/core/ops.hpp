#pragma once

#include <cmath>
#include <cstddef>
#include <limits>
#include <string>
#include <vector>

#include "cplae/core/error.hpp"
#include "cplae/core/gemm.hpp"
#include "cplae/core/tensor.hpp"

namespace cplae {

// ---------------------------------------------------------------------------
// Broadcasting
// ---------------------------------------------------------------------------

namespace detail {

/// Trailing-dimension broadcast. For each output element the offsets into a
/// and b are precomputed; same-shape and scalar operands skip the tables.
struct Broadcast {
  Shape out;
  bool same = false;
  bool b_scalar = false;
  std::vector<std::size_t> off_a, off_b;

  Broadcast(const Shape& a, const Shape& b) {
    if (a == b) {
      out = a;
      same = true;
      return;
    }
    if (shape_numel(b) == 1 && b.size() <= a.size()) {
      out = a;
      b_scalar = true;
      return;
    }
    const std::size_t rank = std::max(a.size(), b.size());
    out.assign(rank, 1);
    std::vector<std::size_t> da(rank, 1), db(rank, 1);
    for (std::size_t i = 0; i < a.size(); ++i) da[rank - a.size() + i] = a[i];
    for (std::size_t i = 0; i < b.size(); ++i) db[rank - b.size() + i] = b[i];
    for (std::size_t i = 0; i < rank; ++i) {
      if (da[i] != db[i] && da[i] != 1 && db[i] != 1)
        throw DimensionError("shapes " + shape_str(a) + " and " + shape_str(b) + " are not broadcastable");
      out[i] = std::max(da[i], db[i]);
    }
    std::vector<std::size_t> sa(rank), sb(rank);
    std::size_t acc_a = 1, acc_b = 1;
    for (std::size_t i = rank; i-- > 0;) {
      sa[i] = da[i] == 1 ? 0 : acc_a;
      sb[i] = db[i] == 1 ? 0 : acc_b;
      acc_a *= da[i];
      acc_b *= db[i];
    }
    const std::size_t n = shape_numel(out);
    off_a.resize(n);
    off_b.resize(n);
    std::vector<std::size_t> idx(rank, 0);
    std::size_t oa = 0, ob = 0;
    for (std::size_t e = 0; e < n; ++e) {
      off_a[e] = oa;
      off_b[e] = ob;
      for (std::size_t d = rank; d-- > 0;) {
        ++idx[d];
        oa += sa[d];
        ob += sb[d];
        if (idx[d] < out[d]) break;
        oa -= sa[d] * idx[d];
        ob -= sb[d] * idx[d];
        idx[d] = 0;
      }
    }
  }

  std::size_t a(std::size_t e) const { return same || b_scalar ? e : off_a[e]; }
  std::size_t b(std::size_t e) const { return same ? e : (b_scalar ? 0 : off_b[e]); }
};

}  // namespace detail

enum class ElementwiseOp { add, sub, mul, div, exp, log, sqrt, relu, negate };

// ---------------------------------------------------------------------------
// Binary elementwise
// ---------------------------------------------------------------------------

namespace detail {

template <typename T, typename Fwd, typename Bwd>
Tensor<T> binary(const char* name, const Tensor<T>& a, const Tensor<T>& b, Fwd fwd, Bwd bwd) {
  auto plan = std::make_shared<Broadcast>(a.shape(), b.shape());
  const std::size_t n = shape_numel(plan->out);
  std::vector<T> out(n);
  const auto& av = a.values();
  const auto& bv = b.values();
  for (std::size_t e = 0; e < n; ++e) out[e] = fwd(av[plan->a(e)], bv[plan->b(e)]);
  return make_result<T>(name, plan->out, std::move(out), {a.node(), b.node()}, [plan, bwd](Node<T>& node) {
    auto& pa = *node.parents[0];
    auto& pb = *node.parents[1];
    T* ga = pa.requires_grad ? pa.grad_buffer().data() : nullptr;
    T* gb = pb.requires_grad ? pb.grad_buffer().data() : nullptr;
    for (std::size_t e = 0; e < node.data.size(); ++e) {
      const std::size_t ia = plan->a(e), ib = plan->b(e);
      T da, db;
      bwd(node.grad[e], pa.data[ia], pb.data[ib], node.data[e], da, db);
      if (ga) ga[ia] += da;
      if (gb) gb[ib] += db;
    }
  });
}

template <typename T, typename Fwd, typename Deriv>
Tensor<T> unary(const char* name, const Tensor<T>& a, Fwd fwd, Deriv deriv) {
  const auto& av = a.values();
  std::vector<T> out(av.size());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = fwd(av[i]);
  return make_result<T>(name, a.shape(), std::move(out), {a.node()}, [deriv](Node<T>& node) {
    auto& p = *node.parents[0];
    auto& g = p.grad_buffer();
    for (std::size_t i = 0; i < node.data.size(); ++i) g[i] += node.grad[i] * deriv(p.data[i], node.data[i]);
  });
}

template <typename T>
void require_finite(const Tensor<T>& a, const char* op) {
  for (T v : a.values())
    if (std::isnan(v)) throw DomainError(std::string(op) + " received NaN input");
}

}  // namespace detail

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  return detail::binary<T>("add", a, b, [](T x, T y) { return x + y; },
                           [](T g, T, T, T, T& da, T& db) { da = g; db = g; });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  return detail::binary<T>("sub", a, b, [](T x, T y) { return x - y; },
                           [](T g, T, T, T, T& da, T& db) { da = g; db = -g; });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  return detail::binary<T>("mul", a, b, [](T x, T y) { return x * y; },
                           [](T g, T x, T y, T, T& da, T& db) { da = g * y; db = g * x; });
}

template <typename T>
Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b) {
  for (T v : b.values())
    if (v == T(0)) throw DomainError("division by zero");
  return detail::binary<T>("div", a, b, [](T x, T y) { return x / y; },
                           [](T g, T x, T y, T, T& da, T& db) { da = g / y; db = -g * x / (y * y); });
}

template <typename T>
Tensor<T> exp(const Tensor<T>& a) {
  return detail::unary<T>("exp", a, [](T x) { return std::exp(x); }, [](T, T y) { return y; });
}

template <typename T>
Tensor<T> log(const Tensor<T>& a) {
  for (T v : a.values())
    if (!(v > T(0))) throw DomainError("log of non-positive value");
  return detail::unary<T>("log", a, [](T x) { return std::log(x); }, [](T x, T) { return T(1) / x; });
}

template <typename T>
Tensor<T> sqrt(const Tensor<T>& a) {
  for (T v : a.values())
    if (v < T(0) || std::isnan(v)) throw DomainError("sqrt of negative value");
  return detail::unary<T>("sqrt", a, [](T x) { return std::sqrt(x); }, [](T, T y) { return T(0.5) / y; });
}

template <typename T>
Tensor<T> relu(const Tensor<T>& a) {
  return detail::unary<T>("relu", a, [](T x) { return x > T(0) ? x : T(0); },
                          [](T x, T) { return x > T(0) ? T(1) : T(0); });
}

template <typename T>
Tensor<T> neg(const Tensor<T>& a) {
  return detail::unary<T>("negate", a, [](T x) { return -x; }, [](T, T) { return T(-1); });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T factor) {
  return detail::unary<T>("scale", a, [factor](T x) { return x * factor; }, [factor](T, T) { return factor; });
}

template <typename T>
Tensor<T> add_scalar(const Tensor<T>& a, T value) {
  return detail::unary<T>("add_scalar", a, [value](T x) { return x + value; }, [](T, T) { return T(1); });
}

/// Dispatch form of the elementwise family. Unary kinds ignore b.
template <typename T>
Tensor<T> elementwise(ElementwiseOp kind, const Tensor<T>& a, const Tensor<T>& b = {}) {
  switch (kind) {
    case ElementwiseOp::add: return add(a, b);
    case ElementwiseOp::sub: return sub(a, b);
    case ElementwiseOp::mul: return mul(a, b);
    case ElementwiseOp::div: return div(a, b);
    case ElementwiseOp::exp: return exp(a);
    case ElementwiseOp::log: return log(a);
    case ElementwiseOp::sqrt: return sqrt(a);
    case ElementwiseOp::relu: return relu(a);
    case ElementwiseOp::negate: return neg(a);
  }
  throw ContractError("unknown elementwise op");
}

template <typename T>
Tensor<T> elementwise(ElementwiseOp kind, const Tensor<T>& a, T b) {
  return elementwise(kind, a, Tensor<T>::scalar(b));
}

template <typename T> Tensor<T> operator+(const Tensor<T>& a, const Tensor<T>& b) { return add(a, b); }
template <typename T> Tensor<T> operator-(const Tensor<T>& a, const Tensor<T>& b) { return sub(a, b); }
template <typename T> Tensor<T> operator*(const Tensor<T>& a, const Tensor<T>& b) { return mul(a, b); }
template <typename T> Tensor<T> operator/(const Tensor<T>& a, const Tensor<T>& b) { return div(a, b); }
template <typename T> Tensor<T> operator-(const Tensor<T>& a) { return neg(a); }

// ---------------------------------------------------------------------------
// Shape manipulation
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> reshape(const Tensor<T>& a, Shape shape) {
  if (shape_numel(shape) != a.numel())
    throw DimensionError("cannot reshape " + shape_str(a.shape()) + " to " + shape_str(shape));
  return make_result<T>("reshape", std::move(shape), a.values(), {a.node()}, [](Node<T>& node) {
    node.parents[0]->accumulate(node.grad);
  });
}

/// Swaps the last two axes (rank 2 or 3).
template <typename T>
Tensor<T> transpose(const Tensor<T>& a) {
  if (a.rank() != 2 && a.rank() != 3) throw DimensionError("transpose expects rank 2 or 3, got " + shape_str(a.shape()));
  const std::size_t batch = a.rank() == 3 ? a.dim(0) : 1;
  const std::size_t rows = a.dim(a.rank() - 2), cols = a.dim(a.rank() - 1);
  Shape out_shape = a.shape();
  std::swap(out_shape[out_shape.size() - 1], out_shape[out_shape.size() - 2]);
  const auto& av = a.values();
  std::vector<T> out(av.size());
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t i = 0; i < rows; ++i)
      for (std::size_t j = 0; j < cols; ++j) out[b * rows * cols + j * rows + i] = av[b * rows * cols + i * cols + j];
  return make_result<T>("transpose", out_shape, std::move(out), {a.node()}, [batch, rows, cols](Node<T>& node) {
    auto& g = node.parents[0]->grad_buffer();
    for (std::size_t b = 0; b < batch; ++b)
      for (std::size_t i = 0; i < rows; ++i)
        for (std::size_t j = 0; j < cols; ++j)
          g[b * rows * cols + i * cols + j] += node.grad[b * rows * cols + j * rows + i];
  });
}

namespace detail {

// Views a tensor as [outer, axis_len, inner] around one axis.
struct AxisSplit {
  std::size_t outer = 1, len = 1, inner = 1;
  AxisSplit(const Shape& s, std::size_t axis) {
    for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
    len = s[axis];
    for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
  }
};

}  // namespace detail

template <typename T>
Tensor<T> slice(const Tensor<T>& a, std::size_t axis, std::size_t start, std::size_t length) {
  if (axis >= a.rank()) throw DimensionError("slice axis " + std::to_string(axis) + " out of range");
  if (length == 0 || start + length > a.dim(axis))
    throw DimensionError("slice [" + std::to_string(start) + ", " + std::to_string(start + length) + ") exceeds axis of " +
                         std::to_string(a.dim(axis)));
  const detail::AxisSplit sp(a.shape(), axis);
  Shape out_shape = a.shape();
  out_shape[axis] = length;
  const auto& av = a.values();
  std::vector<T> out(sp.outer * length * sp.inner);
  for (std::size_t o = 0; o < sp.outer; ++o)
    std::copy_n(av.begin() + (o * sp.len + start) * sp.inner, length * sp.inner, out.begin() + o * length * sp.inner);
  return make_result<T>("slice", out_shape, std::move(out), {a.node()}, [sp, start, length](Node<T>& node) {
    auto& g = node.parents[0]->grad_buffer();
    for (std::size_t o = 0; o < sp.outer; ++o)
      for (std::size_t i = 0; i < length * sp.inner; ++i)
        g[(o * sp.len + start) * sp.inner + i] += node.grad[o * length * sp.inner + i];
  });
}

/// Concatenates along axis, preserving input order exactly.
template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts, std::size_t axis) {
  if (parts.empty()) throw DimensionError("concat of zero tensors");
  const Shape& ref = parts.front().shape();
  if (axis >= ref.size()) throw DimensionError("concat axis " + std::to_string(axis) + " out of range");
  Shape out_shape = ref;
  out_shape[axis] = 0;
  for (const auto& p : parts) {
    if (p.rank() != ref.size()) throw DimensionError("concat rank mismatch");
    for (std::size_t d = 0; d < ref.size(); ++d)
      if (d != axis && p.dim(d) != ref[d])
        throw DimensionError("concat shape mismatch off-axis: " + shape_str(p.shape()) + " vs " + shape_str(ref));
    out_shape[axis] += p.dim(axis);
  }
  const detail::AxisSplit whole(out_shape, axis);
  std::vector<T> out(shape_numel(out_shape));
  std::vector<std::size_t> offsets;
  std::vector<std::shared_ptr<Node<T>>> parents;
  std::size_t offset = 0;
  for (const auto& p : parts) {
    const detail::AxisSplit sp(p.shape(), axis);
    for (std::size_t o = 0; o < sp.outer; ++o)
      std::copy_n(p.values().begin() + o * sp.len * sp.inner, sp.len * sp.inner,
                  out.begin() + (o * whole.len + offset) * whole.inner);
    offsets.push_back(offset);
    offset += sp.len;
    parents.push_back(p.node());
  }
  return make_result<T>("concat", out_shape, std::move(out), std::move(parents), [whole, offsets](Node<T>& node) {
    for (std::size_t k = 0; k < node.parents.size(); ++k) {
      auto& p = *node.parents[k];
      if (!p.requires_grad) continue;
      auto& g = p.grad_buffer();
      const std::size_t len = p.data.size() / (whole.outer * whole.inner);
      for (std::size_t o = 0; o < whole.outer; ++o)
        for (std::size_t i = 0; i < len * whole.inner; ++i)
          g[o * len * whole.inner + i] += node.grad[(o * whole.len + offsets[k]) * whole.inner + i];
    }
  });
}

/// Gathers slices along axis 0; indices may repeat (gradients scatter-add).
template <typename T>
Tensor<T> index_select(const Tensor<T>& a, const std::vector<std::size_t>& indices) {
  if (indices.empty()) throw DimensionError("index_select with no indices");
  const std::size_t row = a.numel() / a.dim(0);
  Shape out_shape = a.shape();
  out_shape[0] = indices.size();
  std::vector<T> out(indices.size() * row);
  for (std::size_t r = 0; r < indices.size(); ++r) {
    if (indices[r] >= a.dim(0)) throw DimensionError("index " + std::to_string(indices[r]) + " out of range");
    std::copy_n(a.values().begin() + indices[r] * row, row, out.begin() + r * row);
  }
  return make_result<T>("index_select", out_shape, std::move(out), {a.node()}, [indices, row](Node<T>& node) {
    auto& g = node.parents[0]->grad_buffer();
    for (std::size_t r = 0; r < indices.size(); ++r)
      for (std::size_t i = 0; i < row; ++i) g[indices[r] * row + i] += node.grad[r * row + i];
  });
}

// ---------------------------------------------------------------------------
// Matrix product
// ---------------------------------------------------------------------------

/// (m×k)·(k×n), (B×m×k)·(B×k×n), or (B×m×k)·(k×n) with the right operand shared.
template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  const bool batched = a.rank() == 3;
  if (a.rank() != 2 && a.rank() != 3) throw DimensionError("matmul lhs must be rank 2 or 3, got " + shape_str(a.shape()));
  if (b.rank() != 2 && b.rank() != 3) throw DimensionError("matmul rhs must be rank 2 or 3, got " + shape_str(b.shape()));
  if (!batched && b.rank() == 3) throw DimensionError("matmul of rank-2 by rank-3 is not supported");
  const bool shared_b = b.rank() == 2;
  const std::size_t batch = batched ? a.dim(0) : 1;
  if (batched && !shared_b && b.dim(0) != batch)
    throw DimensionError("matmul batch mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  const std::size_t m = a.dim(a.rank() - 2), k = a.dim(a.rank() - 1);
  const std::size_t kb = b.dim(b.rank() - 2), n = b.dim(b.rank() - 1);
  if (k != kb) throw DimensionError("matmul inner dimensions differ: " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  std::vector<T> out(batch * m * n, T(0));
  const T* ap = a.values().data();
  const T* bp = b.values().data();
  for (std::size_t s = 0; s < batch; ++s)
    gemm::nn(m, n, k, ap + s * m * k, bp + (shared_b ? 0 : s * k * n), out.data() + s * m * n);
  Shape out_shape = batched ? Shape{batch, m, n} : Shape{m, n};
  return make_result<T>("matmul", out_shape, std::move(out), {a.node(), b.node()},
                        [batch, m, n, k, shared_b](Node<T>& node) {
                          auto& pa = *node.parents[0];
                          auto& pb = *node.parents[1];
                          const T* g = node.grad.data();
                          for (std::size_t s = 0; s < batch; ++s) {
                            if (pa.requires_grad)
                              gemm::nt(m, k, n, g + s * m * n, pb.data.data() + (shared_b ? 0 : s * k * n),
                                       pa.grad_buffer().data() + s * m * k);
                            if (pb.requires_grad)
                              gemm::tn(k, n, m, pa.data.data() + s * m * k, g + s * m * n,
                                       pb.grad_buffer().data() + (shared_b ? 0 : s * k * n));
                          }
                        });
}

// ---------------------------------------------------------------------------
// Reductions
// ---------------------------------------------------------------------------

enum class ReduceOp { sum, mean, max };

/// Reduces over the given axes (all axes when empty). keepdims retains the
/// reduced axes as size 1; otherwise they are dropped (a full reduction yields shape (1)).
template <typename T>
Tensor<T> reduce(ReduceOp kind, const Tensor<T>& a, std::vector<std::size_t> axes = {}, bool keepdims = false) {
  const Shape& in = a.shape();
  if (axes.empty())
    for (std::size_t d = 0; d < in.size(); ++d) axes.push_back(d);
  std::vector<bool> reduced(in.size(), false);
  for (auto ax : axes) {
    if (ax >= in.size()) throw DimensionError("reduce axis " + std::to_string(ax) + " invalid for " + shape_str(in));
    reduced[ax] = true;
  }
  Shape out_shape;
  Shape kept_shape;
  std::size_t count = 1;
  for (std::size_t d = 0; d < in.size(); ++d) {
    if (reduced[d]) {
      count *= in[d];
      kept_shape.push_back(1);
      if (keepdims) out_shape.push_back(1);
    } else {
      kept_shape.push_back(in[d]);
      out_shape.push_back(in[d]);
    }
  }
  if (out_shape.empty()) out_shape.push_back(1);
  // Output index for every input element.
  auto map = std::make_shared<std::vector<std::size_t>>(a.numel());
  {
    std::vector<std::size_t> ostride(in.size());
    std::size_t acc = 1;
    for (std::size_t d = in.size(); d-- > 0;) {
      ostride[d] = reduced[d] ? 0 : acc;
      acc *= kept_shape[d];
    }
    std::vector<std::size_t> idx(in.size(), 0);
    std::size_t o = 0;
    for (std::size_t e = 0; e < a.numel(); ++e) {
      (*map)[e] = o;
      for (std::size_t d = in.size(); d-- > 0;) {
        ++idx[d];
        o += ostride[d];
        if (idx[d] < in[d]) break;
        o -= ostride[d] * idx[d];
        idx[d] = 0;
      }
    }
  }
  const std::size_t out_n = shape_numel(out_shape);
  const auto& av = a.values();
  if (kind == ReduceOp::max) {
    std::vector<T> out(out_n, -std::numeric_limits<T>::infinity());
    auto arg = std::make_shared<std::vector<std::size_t>>(out_n, 0);
    std::vector<bool> set(out_n, false);
    for (std::size_t e = 0; e < av.size(); ++e) {
      const std::size_t o = (*map)[e];
      if (!set[o] || av[e] > out[o]) {
        out[o] = av[e];
        (*arg)[o] = e;
        set[o] = true;
      }
    }
    return make_result<T>("reduce_max", out_shape, std::move(out), {a.node()}, [arg](Node<T>& node) {
      auto& g = node.parents[0]->grad_buffer();
      for (std::size_t o = 0; o < arg->size(); ++o) g[(*arg)[o]] += node.grad[o];
    });
  }
  std::vector<T> out(out_n, T(0));
  for (std::size_t e = 0; e < av.size(); ++e) out[(*map)[e]] += av[e];
  const T factor = kind == ReduceOp::mean ? T(1) / static_cast<T>(count) : T(1);
  if (kind == ReduceOp::mean)
    for (auto& v : out) v /= static_cast<T>(count);
  return make_result<T>(kind == ReduceOp::mean ? "reduce_mean" : "reduce_sum", out_shape, std::move(out), {a.node()},
                        [map, factor](Node<T>& node) {
                          auto& g = node.parents[0]->grad_buffer();
                          for (std::size_t e = 0; e < map->size(); ++e) g[e] += node.grad[(*map)[e]] * factor;
                        });
}

template <typename T>
Tensor<T> sum(const Tensor<T>& a, std::vector<std::size_t> axes = {}, bool keepdims = false) {
  return reduce(ReduceOp::sum, a, std::move(axes), keepdims);
}
template <typename T>
Tensor<T> mean(const Tensor<T>& a, std::vector<std::size_t> axes = {}, bool keepdims = false) {
  return reduce(ReduceOp::mean, a, std::move(axes), keepdims);
}
template <typename T>
Tensor<T> max(const Tensor<T>& a, std::vector<std::size_t> axes = {}, bool keepdims = false) {
  return reduce(ReduceOp::max, a, std::move(axes), keepdims);
}

// ---------------------------------------------------------------------------
// Softmax family
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> softmax(const Tensor<T>& a, std::size_t axis) {
  if (axis >= a.rank()) throw DimensionError("softmax axis out of range");
  detail::require_finite(a, "softmax");
  const detail::AxisSplit sp(a.shape(), axis);
  const auto& av = a.values();
  std::vector<T> out(av.size());
  for (std::size_t o = 0; o < sp.outer; ++o)
    for (std::size_t in = 0; in < sp.inner; ++in) {
      const std::size_t base = o * sp.len * sp.inner + in;
      T mx = av[base];
      for (std::size_t j = 1; j < sp.len; ++j) mx = std::max(mx, av[base + j * sp.inner]);
      T total = 0;
      for (std::size_t j = 0; j < sp.len; ++j) {
        const T e = std::exp(av[base + j * sp.inner] - mx);
        out[base + j * sp.inner] = e;
        total += e;
      }
      for (std::size_t j = 0; j < sp.len; ++j) out[base + j * sp.inner] /= total;
    }
  return make_result<T>("softmax", a.shape(), std::move(out), {a.node()}, [sp](Node<T>& node) {
    auto& g = node.parents[0]->grad_buffer();
    for (std::size_t o = 0; o < sp.outer; ++o)
      for (std::size_t in = 0; in < sp.inner; ++in) {
        const std::size_t base = o * sp.len * sp.inner + in;
        T dot = 0;
        for (std::size_t j = 0; j < sp.len; ++j) dot += node.grad[base + j * sp.inner] * node.data[base + j * sp.inner];
        for (std::size_t j = 0; j < sp.len; ++j) {
          const std::size_t i = base + j * sp.inner;
          g[i] += node.data[i] * (node.grad[i] - dot);
        }
      }
  });
}

template <typename T>
Tensor<T> log_softmax(const Tensor<T>& a, std::size_t axis) {
  if (axis >= a.rank()) throw DimensionError("log_softmax axis out of range");
  detail::require_finite(a, "log_softmax");
  const detail::AxisSplit sp(a.shape(), axis);
  const auto& av = a.values();
  std::vector<T> out(av.size());
  for (std::size_t o = 0; o < sp.outer; ++o)
    for (std::size_t in = 0; in < sp.inner; ++in) {
      const std::size_t base = o * sp.len * sp.inner + in;
      T mx = av[base];
      for (std::size_t j = 1; j < sp.len; ++j) mx = std::max(mx, av[base + j * sp.inner]);
      T total = 0;
      for (std::size_t j = 0; j < sp.len; ++j) total += std::exp(av[base + j * sp.inner] - mx);
      const T lse = mx + std::log(total);
      for (std::size_t j = 0; j < sp.len; ++j) out[base + j * sp.inner] = av[base + j * sp.inner] - lse;
    }
  return make_result<T>("log_softmax", a.shape(), std::move(out), {a.node()}, [sp](Node<T>& node) {
    auto& g = node.parents[0]->grad_buffer();
    for (std::size_t o = 0; o < sp.outer; ++o)
      for (std::size_t in = 0; in < sp.inner; ++in) {
        const std::size_t base = o * sp.len * sp.inner + in;
        T total = 0;
        for (std::size_t j = 0; j < sp.len; ++j) total += node.grad[base + j * sp.inner];
        for (std::size_t j = 0; j < sp.len; ++j) {
          const std::size_t i = base + j * sp.inner;
          g[i] += node.grad[i] - std::exp(node.data[i]) * total;
        }
      }
  });
}

// ---------------------------------------------------------------------------
// Distances and similarities
// ---------------------------------------------------------------------------

/// Entry (i, j) = Σ_k (a_ik − b_jk)², computed from explicit differences so
/// the self-distance diagonal is exactly zero.
template <typename T>
Tensor<T> pairwise_sqeuclidean(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() != 2 || b.rank() != 2) throw DimensionError("pairwise_sqeuclidean expects rank-2 operands");
  const std::size_t N = a.dim(0), M = b.dim(0), d = a.dim(1);
  if (b.dim(1) != d) throw DimensionError("feature dimensions differ: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  const auto& av = a.values();
  const auto& bv = b.values();
  std::vector<T> out(N * M);
  for (std::size_t i = 0; i < N; ++i)
    for (std::size_t j = 0; j < M; ++j) {
      T acc = 0;
      for (std::size_t k = 0; k < d; ++k) {
        const T diff = av[i * d + k] - bv[j * d + k];
        acc += diff * diff;
      }
      out[i * M + j] = acc;
    }
  return make_result<T>("pairwise_sqeuclidean", {N, M}, std::move(out), {a.node(), b.node()}, [N, M, d](Node<T>& node) {
    auto& pa = *node.parents[0];
    auto& pb = *node.parents[1];
    T* ga = pa.requires_grad ? pa.grad_buffer().data() : nullptr;
    T* gb = pb.requires_grad ? pb.grad_buffer().data() : nullptr;
    for (std::size_t i = 0; i < N; ++i)
      for (std::size_t j = 0; j < M; ++j) {
        const T g2 = T(2) * node.grad[i * M + j];
        for (std::size_t k = 0; k < d; ++k) {
          const T diff = g2 * (pa.data[i * d + k] - pb.data[j * d + k]);
          if (ga) ga[i * d + k] += diff;
          if (gb) gb[j * d + k] -= diff;
        }
      }
  });
}

/// Rows scaled to unit Euclidean norm. Zero rows are a domain error.
template <typename T>
Tensor<T> normalize_rows(const Tensor<T>& a) {
  if (a.rank() != 2) throw DimensionError("normalize_rows expects rank 2");
  auto norms = sqrt(sum(mul(a, a), {1}, true));
  for (T v : norms.values())
    if (v == T(0)) throw DomainError("cosine similarity of a zero-norm vector");
  return div(a, norms);
}

/// a·b / (‖a‖‖b‖) for two vectors; result has shape (1).
template <typename T>
Tensor<T> cosine_similarity(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() != 1 || b.rank() != 1 || a.dim(0) != b.dim(0))
    throw DimensionError("cosine_similarity expects equal-length vectors, got " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()));
  auto na = sqrt(sum(mul(a, a)));
  auto nb = sqrt(sum(mul(b, b)));
  if (na.item() == T(0) || nb.item() == T(0)) throw DomainError("cosine similarity of a zero-norm vector");
  return div(sum(mul(a, b)), mul(na, nb));
}

/// Cosine similarity of every row of a [N×d] with every row of b [M×d] -> [N×M].
template <typename T>
Tensor<T> cosine_matrix(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(1))
    throw DimensionError("cosine_matrix expects [N×d] and [M×d], got " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()));
  return matmul(normalize_rows(a), transpose(normalize_rows(b)));
}

}  // namespace cplae
