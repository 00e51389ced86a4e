#pragma once

#include <cmath>
#include <span>
#include <vector>

#include "a2m/meta_training.hpp"

namespace a2m {

enum class OptimizerKind { sgd, adaptive };

/// Plain SGD or an Adam-style adaptive update on the meta-parameters.
class MetaOptimizer {
 public:
  MetaOptimizer(OptimizerKind kind, double lr) : kind_(kind), lr_(lr) {}

  MetaModel apply(const MetaModel& model, std::span<const Tensor> grads) {
    if (kind_ == OptimizerKind::sgd) {
      auto m = model;
      m.meta_lr = lr_;
      return apply_sgd(m, grads);
    }
    const auto params = model.parameters();
    if (grads.size() != params.size()) throw UsageError("optimizer: gradient count mismatch");
    if (first_.empty()) {
      for (const auto& p : params) {
        first_.emplace_back(p.size(), 0.0);
        second_.emplace_back(p.size(), 0.0);
      }
    }
    ++t_;
    const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    std::vector<Tensor> next;
    for (std::size_t i = 0; i < params.size(); ++i) {
      std::vector<double> v(params[i].values().begin(), params[i].values().end());
      for (std::size_t j = 0; j < v.size(); ++j) {
        const double g = grads[i][j];
        first_[i][j] = beta1_ * first_[i][j] + (1.0 - beta1_) * g;
        second_[i][j] = beta2_ * second_[i][j] + (1.0 - beta2_) * g * g;
        v[j] -= lr_ * (first_[i][j] / c1) / (std::sqrt(second_[i][j] / c2) + eps_);
      }
      next.emplace_back(params[i].shape(), std::move(v));
    }
    return model.with_parameters(next);
  }

 private:
  OptimizerKind kind_;
  double lr_;
  double beta1_ = 0.9;
  double beta2_ = 0.999;
  double eps_ = 1e-8;
  long t_ = 0;
  std::vector<std::vector<double>> first_;
  std::vector<std::vector<double>> second_;
};

}  // namespace a2m
