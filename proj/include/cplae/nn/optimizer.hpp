#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "cplae/core/error.hpp"
#include "cplae/core/grad_check.hpp"

namespace cplae::nn {

enum class OptimizerKind { sgd_nesterov, adam };

inline std::string to_string(OptimizerKind k) { return k == OptimizerKind::adam ? "adam" : "sgd_nesterov"; }

inline OptimizerKind optimizer_kind_from_string(const std::string& s) {
  if (s == "adam") return OptimizerKind::adam;
  if (s == "sgd_nesterov" || s == "sgd") return OptimizerKind::sgd_nesterov;
  throw ConfigError("optimizer.kind must be \"adam\" or \"sgd_nesterov\", got \"" + s + "\"");
}

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::adam;
  double lr = 1e-4;
  double weight_decay = 0.0;
  double momentum = 0.9;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// In-place parameter updates. With g the gradient and θ the parameter,
/// g_wd = g + weight_decay·θ in both rules.
///
/// sgd_nesterov:
///   v ← μ·v + g_wd
///   θ ← θ − lr·(g_wd + μ·v)
///
/// adam (t counts steps from 1):
///   m ← β₁·m + (1 − β₁)·g_wd
///   s ← β₂·s + (1 − β₂)·g_wd²
///   θ ← θ − lr·(m / (1 − β₁ᵗ)) / (√(s / (1 − β₂ᵗ)) + ε)
///
/// All arithmetic is carried out in double and rounded once into the parameter.
template <typename T>
class Optimizer {
 public:
  Optimizer(OptimizerConfig config, NamedTensors<T> params) : config_(config), params_(std::move(params)) {
    if (config_.lr < 0) throw ConfigError("optimizer.lr must be >= 0");
    for (const auto& [name, p] : params_) {
      first_.emplace_back(p.numel(), 0.0);
      second_.emplace_back(config_.kind == OptimizerKind::adam ? p.numel() : 0, 0.0);
    }
  }

  const OptimizerConfig& config() const { return config_; }
  double lr() const { return config_.lr; }
  void set_lr(double lr) { config_.lr = lr; }
  std::uint64_t step_count() const { return steps_; }
  const NamedTensors<T>& parameters() const { return params_; }

  void zero_grad() {
    for (auto& [name, p] : params_) p.zero_grad();
  }

  void step() {
    for (const auto& [name, p] : params_)
      if (!p.has_grad()) throw ContractError("optimizer step: parameter '" + name + "' has no gradient");
    ++steps_;
    const double lr = config_.lr, wd = config_.weight_decay;
    for (std::size_t k = 0; k < params_.size(); ++k) {
      auto& p = params_[k].second;
      auto theta = p.mutable_data();
      auto grad = p.grad();
      auto& m = first_[k];
      if (config_.kind == OptimizerKind::sgd_nesterov) {
        const double mu = config_.momentum;
        for (std::size_t i = 0; i < theta.size(); ++i) {
          const double g = static_cast<double>(grad[i]) + wd * static_cast<double>(theta[i]);
          m[i] = mu * m[i] + g;
          theta[i] = static_cast<T>(static_cast<double>(theta[i]) - lr * (g + mu * m[i]));
        }
      } else {
        auto& s = second_[k];
        const double b1 = config_.beta1, b2 = config_.beta2;
        const double c1 = 1.0 - std::pow(b1, static_cast<double>(steps_));
        const double c2 = 1.0 - std::pow(b2, static_cast<double>(steps_));
        for (std::size_t i = 0; i < theta.size(); ++i) {
          const double g = static_cast<double>(grad[i]) + wd * static_cast<double>(theta[i]);
          m[i] = b1 * m[i] + (1.0 - b1) * g;
          s[i] = b2 * s[i] + (1.0 - b2) * g * g;
          const double update = (m[i] / c1) / (std::sqrt(s[i] / c2) + config_.eps);
          theta[i] = static_cast<T>(static_cast<double>(theta[i]) - lr * update);
        }
      }
    }
  }

  const std::vector<double>& first_moment(std::size_t k) const { return first_[k]; }
  const std::vector<double>& second_moment(std::size_t k) const { return second_[k]; }

 private:
  OptimizerConfig config_;
  NamedTensors<T> params_;
  std::vector<std::vector<double>> first_, second_;
  std::uint64_t steps_ = 0;
};

/// initial_lr · 0.5^floor(epoch / halving_period)
inline double lr_schedule(double initial_lr, std::size_t epoch, std::size_t halving_period = 20) {
  if (halving_period == 0) return initial_lr;
  return initial_lr * std::pow(0.5, static_cast<double>(epoch / halving_period));
}

}  // namespace cplae::nn
