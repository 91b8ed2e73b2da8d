#pragma once

#include <cmath>
#include <vector>

#include "loco/nn/param.hpp"

namespace loco::nn {

/// SGD with heavy-ball momentum and L2 weight decay.
template <typename Scalar>
class Sgd {
 public:
  Sgd() = default;
  Sgd(double momentum, double weight_decay) : momentum_(momentum), weight_decay_(weight_decay) {}

  void step(const std::vector<Param<Scalar>*>& params, double lr) {
    if (velocity_.size() != params.size()) {
      velocity_.clear();
      for (auto* p : params) velocity_.push_back(Planes<Scalar>::Zero(p->value.rows(), p->value.cols()));
    }
    const Scalar mu = Scalar(momentum_), wd = Scalar(weight_decay_), eta = Scalar(lr);
    for (std::size_t i = 0; i < params.size(); ++i) {
      auto& p = *params[i];
      velocity_[i] = mu * velocity_[i] + p.grad + wd * p.value;
      p.value -= eta * velocity_[i];
    }
  }

  std::vector<Planes<Scalar>>& velocity() { return velocity_; }
  const std::vector<Planes<Scalar>>& velocity() const { return velocity_; }

 private:
  double momentum_ = 0.9, weight_decay_ = 1e-4;
  std::vector<Planes<Scalar>> velocity_;
};

/// lr0 * (1 - step / total)^power.
inline double poly_lr(double lr0, long step, long total, double power = 0.9) {
  if (total <= 0) return lr0;
  const double frac = std::min(1.0, double(step) / double(total));
  return lr0 * std::pow(1.0 - frac, power);
}

}  // namespace loco::nn
