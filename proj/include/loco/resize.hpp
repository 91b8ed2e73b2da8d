#pragma once

#include <Eigen/Sparse>

#include <algorithm>
#include <cmath>

#include "loco/tensor.hpp"

namespace loco {

template <typename Scalar>
using Interp = Eigen::SparseMatrix<Scalar, Eigen::ColMajor>;

namespace detail {

struct Tap {
  Index lo, hi;
  double frac;
};

// Half-pixel-centre convention (align_corners = false).
inline Tap bilinear_tap(Index dst, Index in, Index out) {
  const double scale = double(in) / double(out);
  double src = (double(dst) + 0.5) * scale - 0.5;
  if (src < 0.0) src = 0.0;
  Index lo = static_cast<Index>(std::floor(src));
  if (lo > in - 1) lo = in - 1;
  const Index hi = std::min<Index>(lo + 1, in - 1);
  return {lo, hi, src - double(lo)};
}

}  // namespace detail

/// Interpolation operator R with out_plane = in_plane * R, shape
/// (in_h*in_w) x (out_h*out_w). Backward of the resize is grad_out * R^T.
template <typename Scalar>
Interp<Scalar> bilinear_operator(Index in_h, Index in_w, Index out_h, Index out_w) {
  std::vector<Eigen::Triplet<Scalar>> trips;
  trips.reserve(static_cast<std::size_t>(4 * out_h * out_w));
  for (Index y = 0; y < out_h; ++y) {
    const auto ty = detail::bilinear_tap(y, in_h, out_h);
    for (Index x = 0; x < out_w; ++x) {
      const auto tx = detail::bilinear_tap(x, in_w, out_w);
      const Index o = y * out_w + x;
      const double wy[2] = {1.0 - ty.frac, ty.frac};
      const double wx[2] = {1.0 - tx.frac, tx.frac};
      const Index ys[2] = {ty.lo, ty.hi};
      const Index xs[2] = {tx.lo, tx.hi};
      for (int a = 0; a < 2; ++a)
        for (int b = 0; b < 2; ++b) {
          const double w = wy[a] * wx[b];
          if (w != 0.0) trips.emplace_back(ys[a] * in_w + xs[b], o, Scalar(w));
        }
    }
  }
  Interp<Scalar> r(in_h * in_w, out_h * out_w);
  r.setFromTriplets(trips.begin(), trips.end());
  return r;
}

/// Bilinear resize of every image in the batch.
template <typename Scalar>
Tensor<Scalar> resize_bilinear(const Tensor<Scalar>& in, Index out_h, Index out_w) {
  if (in.height == out_h && in.width == out_w) return in;
  const auto r = bilinear_operator<Scalar>(in.height, in.width, out_h, out_w);
  Tensor<Scalar> out(in.channels(), in.count, out_h, out_w);
  for (Index i = 0; i < in.count; ++i) out.image(i) = in.image(i) * r;
  return out;
}

/// Nearest-neighbour resize for label maps (labels are never blended).
inline LabelMap resize_nearest(const LabelMap& in, Index out_h, Index out_w) {
  if (in.height == out_h && in.width == out_w) return in;
  LabelMap out(in.count, out_h, out_w);
  auto src = [](Index dst, Index n_in, Index n_out) {
    const double s = (double(dst) + 0.5) * double(n_in) / double(n_out);
    return std::min<Index>(static_cast<Index>(std::floor(s)), n_in - 1);
  };
  for (Index n = 0; n < in.count; ++n)
    for (Index y = 0; y < out_h; ++y) {
      const Index sy = src(y, in.height, out_h);
      for (Index x = 0; x < out_w; ++x) out.at(n, y, x) = in.at(n, sy, src(x, in.width, out_w));
    }
  return out;
}

}  // namespace loco
