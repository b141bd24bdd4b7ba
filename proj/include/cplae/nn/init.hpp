#pragma once

#include <cmath>

#include "cplae/core/rng.hpp"
#include "cplae/core/tensor.hpp"

namespace cplae::nn {

inline constexpr double kReluGain = 1.4142135623730951;
inline constexpr double kLinearGain = 1.0;

/// Kaiming-uniform: U(−b, b) with b = gain·√(3 / fan_in).
template <typename T>
Tensor<T> kaiming_uniform(Shape shape, std::size_t fan_in, double gain, Rng& rng) {
  const double bound = gain * std::sqrt(3.0 / static_cast<double>(fan_in));
  std::vector<T> v(shape_numel(shape));
  for (auto& x : v) x = static_cast<T>(rng.uniform(-bound, bound));
  return Tensor<T>(std::move(shape), std::move(v), true);
}

}  // namespace cplae::nn
