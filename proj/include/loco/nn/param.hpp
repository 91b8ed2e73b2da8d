#pragma once

#include <random>
#include <string>
#include <vector>

#include "loco/tensor.hpp"

namespace loco::nn {

/// Trainable tensor with its accumulated gradient.
template <typename Scalar>
struct Param {
  std::string name;
  Planes<Scalar> value;
  Planes<Scalar> grad;

  Param() = default;
  Param(std::string n, Index rows, Index cols)
      : name(std::move(n)), value(Planes<Scalar>::Zero(rows, cols)),
        grad(Planes<Scalar>::Zero(rows, cols)) {}

  void zero_grad() { grad.setZero(); }
};

/// Non-trainable state (normalisation running statistics).
template <typename Scalar>
struct Buffer {
  std::string name;
  Planes<Scalar>* value;
};

/// He-normal initialisation for a weight with `fan_in` inputs.
template <typename Scalar, typename Gen>
void he_normal(Param<Scalar>& p, Index fan_in, Gen& gen) {
  std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / double(fan_in)));
  for (Index i = 0; i < p.value.size(); ++i) p.value.data()[i] = Scalar(dist(gen));
}

}  // namespace loco::nn
