#pragma once

// Pixel-wise cross-entropy objectives and their gradients w.r.t. logits.

#include <cmath>
#include <limits>
#include <string>

#include "loco/tensor.hpp"

namespace loco {

struct LossWeights {
  double lambda1 = 0.5;  // unsupervised consistency
  double lambda2 = 0.1;  // contrastive
};

template <typename Scalar>
struct LossGrad {
  Scalar value = 0;
  Tensor<Scalar> grad_logits;  // same layout as the probabilities
};

namespace detail {

template <typename Scalar>
Scalar neg_log(Scalar p) {
  return -std::log(std::max(p, std::numeric_limits<Scalar>::min()));
}

}  // namespace detail

/// Mean over images of the per-image mean CE over non-ignore pixels. Images
/// without labelled pixels are left out of the outer mean.
template <typename Scalar>
LossGrad<Scalar> supervised_loss_grad(const ProbMap<Scalar>& probs, const Mask& masks) {
  if (masks.values.size() != probs.pixels()) throw ShapeError("supervised_loss: shape mismatch");
  LossGrad<Scalar> out;
  out.grad_logits = Tensor<Scalar>::zeros(probs.channels(), probs.count, probs.height, probs.width);
  const Index plane = probs.plane();
  std::vector<Index> labelled(std::size_t(probs.count), 0);
  Index images = 0;
  for (Index n = 0; n < probs.count; ++n) {
    for (Index j = 0; j < plane; ++j) labelled[std::size_t(n)] += masks.values(n * plane + j) != kIgnore;
    images += labelled[std::size_t(n)] > 0;
  }
  if (images == 0) return out;
  double total = 0.0;
  for (Index n = 0; n < probs.count; ++n) {
    const Index cnt = labelled[std::size_t(n)];
    if (cnt == 0) continue;
    const double w = 1.0 / (double(images) * double(cnt));
    for (Index j = 0; j < plane; ++j) {
      const Index p = n * plane + j;
      const Label y = masks.values(p);
      if (y == kIgnore) continue;
      total += w * double(detail::neg_log(probs.data(y, p)));
      out.grad_logits.data.col(p) = Scalar(w) * probs.data.col(p);
      out.grad_logits.data(y, p) -= Scalar(w);
    }
  }
  out.value = Scalar(total);
  return out;
}

template <typename Scalar>
Scalar supervised_loss(const ProbMap<Scalar>& probs, const Mask& masks) {
  return supervised_loss_grad(probs, masks).value;
}

/// CE against pseudo-labels averaged with the full N*H*W denominator:
/// filtered pixels contribute zero but still count.
template <typename Scalar>
LossGrad<Scalar> unsupervised_loss_grad(const ProbMap<Scalar>& probs, const PseudoLabelMap& pseudo) {
  if (pseudo.values.size() != probs.pixels()) throw ShapeError("unsupervised_loss: shape mismatch");
  LossGrad<Scalar> out;
  out.grad_logits = Tensor<Scalar>::zeros(probs.channels(), probs.count, probs.height, probs.width);
  if (probs.pixels() == 0) return out;
  const double w = 1.0 / double(probs.pixels());
  double total = 0.0;
  for (Index p = 0; p < probs.pixels(); ++p) {
    const Label y = pseudo.values(p);
    if (y == kIgnore) continue;
    total += w * double(detail::neg_log(probs.data(y, p)));
    out.grad_logits.data.col(p) = Scalar(w) * probs.data.col(p);
    out.grad_logits.data(y, p) -= Scalar(w);
  }
  out.value = Scalar(total);
  return out;
}

template <typename Scalar>
Scalar unsupervised_loss(const ProbMap<Scalar>& probs, const PseudoLabelMap& pseudo) {
  return unsupervised_loss_grad(probs, pseudo).value;
}

/// L_sup + lambda1 * L_u + lambda2 * L_lcc.
inline double total_loss(double l_sup, double l_u, double l_lcc, const LossWeights& w) {
  if (!std::isfinite(l_sup)) throw NumericFault("L_sup", "non-finite loss component");
  if (!std::isfinite(l_u)) throw NumericFault("L_u", "non-finite loss component");
  if (!std::isfinite(l_lcc)) throw NumericFault("L_lcc", "non-finite loss component");
  return l_sup + w.lambda1 * l_u + w.lambda2 * l_lcc;
}

}  // namespace loco
