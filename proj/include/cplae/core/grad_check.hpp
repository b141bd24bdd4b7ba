#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "cplae/core/error.hpp"
#include "cplae/core/tensor.hpp"

namespace cplae {

struct GradCheckReport {
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;
  std::size_t entries = 0;
  std::string worst_param;
  std::size_t worst_index = 0;
  double tolerance = 0.0;
  bool passed = true;
};

template <typename T>
using NamedTensors = std::vector<std::pair<std::string, Tensor<T>>>;

/// Compares analytic gradients of a scalar function with central differences
/// (f(θ+h) − f(θ−h)) / 2h entry by entry.
///
/// Relative error per entry is |analytic − numeric| / max(|analytic|, |numeric|, floor);
/// the floor keeps entries whose true gradient is ~0 from reporting round-off
/// as a large relative error.
template <typename T>
GradCheckReport grad_check(const std::function<Tensor<T>()>& f, NamedTensors<T> params, double h = 1e-5,
                           double tol = 1e-4, double floor = 1e-6) {
  for (auto& [name, p] : params) p.zero_grad();
  Tensor<T> loss = f();
  if (!std::isfinite(static_cast<double>(loss.item()))) throw DomainError("grad_check: function value is not finite");
  if (loss.requires_grad()) backward(loss);

  GradCheckReport report;
  report.tolerance = tol;
  for (auto& [name, p] : params) {
    std::vector<T> analytic(p.numel(), T(0));
    if (p.has_grad()) std::copy(p.grad().begin(), p.grad().end(), analytic.begin());
    auto data = p.mutable_data();
    for (std::size_t i = 0; i < data.size(); ++i) {
      const T saved = data[i];
      double plus, minus;
      {
        NoGradGuard guard;
        data[i] = saved + static_cast<T>(h);
        plus = static_cast<double>(f().item());
        data[i] = saved - static_cast<T>(h);
        minus = static_cast<double>(f().item());
      }
      data[i] = saved;
      if (!std::isfinite(plus) || !std::isfinite(minus)) throw DomainError("grad_check: function value is not finite");
      const double numeric = (plus - minus) / (2.0 * h);
      const double a = static_cast<double>(analytic[i]);
      const double abs_err = std::abs(a - numeric);
      const double rel = abs_err / std::max({std::abs(a), std::abs(numeric), floor});
      report.max_abs_error = std::max(report.max_abs_error, abs_err);
      if (rel > report.max_rel_error || report.entries == 0) {
        report.max_rel_error = std::max(report.max_rel_error, rel);
        report.worst_param = name;
        report.worst_index = i;
      }
      ++report.entries;
    }
  }
  for (auto& [name, p] : params) p.zero_grad();
  report.passed = report.max_rel_error < tol;
  return report;
}

}  // namespace cplae
