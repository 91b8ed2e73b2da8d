#pragma once

// Minimal layers with explicit forward/backward. Activations are planar
// batches (channels x N*H*W); each layer caches what its backward needs.

#include <Eigen/Sparse>

#include <array>
#include <optional>
#include <string>

#include "loco/nn/param.hpp"
#include "loco/resize.hpp"

namespace loco::nn {

enum class Mode { train, eval };

template <typename Scalar>
void check_finite(const Tensor<Scalar>& t, const std::string& layer) {
  if (!t.data.allFinite()) throw NumericFault(layer, "non-finite activation");
}

/// 2-D convolution lowered to a single GEMM per batch via im2col.
template <typename Scalar>
class Conv2d {
 public:
  Conv2d() = default;
  Conv2d(std::string name, Index in_ch, Index out_ch, Index kernel, Index stride, Index pad,
         bool bias)
      : name_(std::move(name)), in_ch_(in_ch), kernel_(kernel), stride_(stride), pad_(pad),
        weight_(name_ + ".weight", out_ch, in_ch * kernel * kernel),
        bias_(name_ + ".bias", bias ? out_ch : 0, 1) {}

  const std::string& name() const { return name_; }
  Index out_channels() const { return weight_.value.rows(); }
  Index fan_in() const { return weight_.value.cols(); }
  Param<Scalar>& weight() { return weight_; }
  Param<Scalar>& bias() { return bias_; }

  void collect(std::vector<Param<Scalar>*>& out) {
    out.push_back(&weight_);
    if (bias_.value.rows() > 0) out.push_back(&bias_);
  }

  Index out_size(Index n) const { return (n + 2 * pad_ - kernel_) / stride_ + 1; }

  Tensor<Scalar> forward(const Tensor<Scalar>& x) {
    if (x.channels() != in_ch_) throw ShapeError(name_ + ": unexpected input channels");
    in_shape_ = {x.count, x.height, x.width};
    const Index oh = out_size(x.height), ow = out_size(x.width);
    Tensor<Scalar> y(out_channels(), x.count, oh, ow);
    if (pointwise()) {
      cols_ = x.data;
    } else {
      im2col(x, oh, ow);
    }
    y.data.noalias() = weight_.value * cols_;
    if (bias_.value.rows() > 0) y.data.colwise() += bias_.value.col(0);
    return y;
  }

  Tensor<Scalar> backward(const Tensor<Scalar>& gy) {
    weight_.grad.noalias() += gy.data * cols_.transpose();
    if (bias_.value.rows() > 0) bias_.grad.col(0) += gy.data.rowwise().sum();
    Planes<Scalar> gcols = weight_.value.transpose() * gy.data;
    Tensor<Scalar> gx(in_ch_, in_shape_[0], in_shape_[1], in_shape_[2]);
    if (pointwise()) gx.data = std::move(gcols);
    else col2im(gcols, gx, gy.height, gy.width);
    return gx;
  }

 private:
  bool pointwise() const { return kernel_ == 1 && stride_ == 1 && pad_ == 0; }

  void im2col(const Tensor<Scalar>& x, Index oh, Index ow) {
    const Index k = kernel_;
    cols_.resize(in_ch_ * k * k, x.count * oh * ow);
    for (Index ci = 0; ci < in_ch_; ++ci)
      for (Index ky = 0; ky < k; ++ky)
        for (Index kx = 0; kx < k; ++kx) {
          Scalar* row = cols_.row((ci * k + ky) * k + kx).data();
          const Scalar* src = x.data.row(ci).data();
          for (Index n = 0; n < x.count; ++n)
            for (Index oy = 0; oy < oh; ++oy) {
              Scalar* dst = row + (n * oh + oy) * ow;
              const Index iy = oy * stride_ - pad_ + ky;
              if (iy < 0 || iy >= x.height) {
                std::fill(dst, dst + ow, Scalar(0));
                continue;
              }
              const Scalar* line = src + n * x.plane() + iy * x.width;
              for (Index ox = 0; ox < ow; ++ox) {
                const Index ix = ox * stride_ - pad_ + kx;
                dst[ox] = (ix >= 0 && ix < x.width) ? line[ix] : Scalar(0);
              }
            }
        }
  }

  void col2im(const Planes<Scalar>& gcols, Tensor<Scalar>& gx, Index oh, Index ow) const {
    const Index k = kernel_;
    for (Index ci = 0; ci < in_ch_; ++ci)
      for (Index ky = 0; ky < k; ++ky)
        for (Index kx = 0; kx < k; ++kx) {
          const Scalar* row = gcols.row((ci * k + ky) * k + kx).data();
          Scalar* dst = gx.data.row(ci).data();
          for (Index n = 0; n < gx.count; ++n)
            for (Index oy = 0; oy < oh; ++oy) {
              const Index iy = oy * stride_ - pad_ + ky;
              if (iy < 0 || iy >= gx.height) continue;
              const Scalar* src = row + (n * oh + oy) * ow;
              Scalar* line = dst + n * gx.plane() + iy * gx.width;
              for (Index ox = 0; ox < ow; ++ox) {
                const Index ix = ox * stride_ - pad_ + kx;
                if (ix >= 0 && ix < gx.width) line[ix] += src[ox];
              }
            }
        }
  }

  std::string name_;
  Index in_ch_ = 0, kernel_ = 1, stride_ = 1, pad_ = 0;
  Param<Scalar> weight_, bias_;
  Planes<Scalar> cols_;
  std::array<Index, 3> in_shape_{};
};

/// Batch normalisation over (N, H, W) per channel.
template <typename Scalar>
class BatchNorm {
 public:
  BatchNorm() = default;
  BatchNorm(std::string name, Index channels, double momentum = 0.1, double eps = 1e-5)
      : name_(std::move(name)), momentum_(momentum), eps_(eps),
        gamma_(name_ + ".gamma", channels, 1), beta_(name_ + ".beta", channels, 1),
        running_mean_(Planes<Scalar>::Zero(channels, 1)),
        running_var_(Planes<Scalar>::Ones(channels, 1)) {
    gamma_.value.setOnes();
  }

  void collect(std::vector<Param<Scalar>*>& out) {
    out.push_back(&gamma_);
    out.push_back(&beta_);
  }
  void collect(std::vector<Buffer<Scalar>>& out) {
    out.push_back({name_ + ".running_mean", &running_mean_});
    out.push_back({name_ + ".running_var", &running_var_});
  }

  Tensor<Scalar> forward(const Tensor<Scalar>& x, Mode mode) {
    Tensor<Scalar> y = x;
    const Index n = x.pixels();
    if (mode == Mode::train) {
      const Vec<Scalar> mean = x.data.rowwise().mean();
      xhat_ = x.data.colwise() - mean;
      const Vec<Scalar> var = xhat_.rowwise().squaredNorm() / Scalar(n);
      inv_std_ = (var.array() + Scalar(eps_)).rsqrt().matrix();
      xhat_ = inv_std_.asDiagonal() * xhat_;
      const Scalar unbias = n > 1 ? Scalar(n) / Scalar(n - 1) : Scalar(1);
      running_mean_.col(0) = Scalar(1 - momentum_) * running_mean_.col(0) + Scalar(momentum_) * mean;
      running_var_.col(0) =
          Scalar(1 - momentum_) * running_var_.col(0) + Scalar(momentum_) * unbias * var;
      y.data = (gamma_.value.col(0).asDiagonal() * xhat_).colwise() + beta_.value.col(0);
    } else {
      const Vec<Scalar> inv = (running_var_.col(0).array() + Scalar(eps_)).rsqrt().matrix();
      const Vec<Scalar> scale = gamma_.value.col(0).cwiseProduct(inv);
      const Vec<Scalar> shift = beta_.value.col(0) - scale.cwiseProduct(running_mean_.col(0));
      y.data = (scale.asDiagonal() * x.data).colwise() + shift;
    }
    return y;
  }

  // Valid after a train-mode forward.
  Tensor<Scalar> backward(const Tensor<Scalar>& gy) {
    const Scalar n = Scalar(gy.pixels());
    const Vec<Scalar> sum_g = gy.data.rowwise().sum();
    const Vec<Scalar> sum_gx = gy.data.cwiseProduct(xhat_).rowwise().sum();
    beta_.grad.col(0) += sum_g;
    gamma_.grad.col(0) += sum_gx;
    Tensor<Scalar> gx = gy;
    const Vec<Scalar> scale = gamma_.value.col(0).cwiseProduct(inv_std_) / n;
    gx.data = scale.asDiagonal() *
              ((gy.data * n).colwise() - sum_g - sum_gx.asDiagonal() * xhat_);
    return gx;
  }

 private:
  std::string name_;
  double momentum_ = 0.1, eps_ = 1e-5;
  Param<Scalar> gamma_, beta_;
  Planes<Scalar> running_mean_, running_var_;
  Planes<Scalar> xhat_;
  Vec<Scalar> inv_std_;
};

template <typename Scalar>
class Relu {
 public:
  Tensor<Scalar> forward(const Tensor<Scalar>& x) {
    Tensor<Scalar> y = x;
    y.data = x.data.cwiseMax(Scalar(0));
    mask_ = (x.data.array() > Scalar(0)).template cast<Scalar>().matrix();
    return y;
  }
  Tensor<Scalar> backward(const Tensor<Scalar>& gy) {
    Tensor<Scalar> gx = gy;
    gx.data = gy.data.cwiseProduct(mask_);
    return gx;
  }

 private:
  Planes<Scalar> mask_;
};

/// Bilinear resize to a fixed target size.
template <typename Scalar>
class Upsample {
 public:
  Tensor<Scalar> forward(const Tensor<Scalar>& x, Index out_h, Index out_w) {
    in_h_ = x.height;
    in_w_ = x.width;
    if (x.height == out_h && x.width == out_w) {
      op_.reset();
      return x;
    }
    op_ = bilinear_operator<Scalar>(x.height, x.width, out_h, out_w);
    Tensor<Scalar> y(x.channels(), x.count, out_h, out_w);
    for (Index i = 0; i < x.count; ++i) y.image(i) = x.image(i) * *op_;
    return y;
  }
  Tensor<Scalar> backward(const Tensor<Scalar>& gy) {
    if (!op_) return gy;
    Tensor<Scalar> gx(gy.channels(), gy.count, in_h_, in_w_);
    const Interp<Scalar> opt = op_->transpose();
    for (Index i = 0; i < gy.count; ++i) gx.image(i) = gy.image(i) * opt;
    return gx;
  }

 private:
  std::optional<Interp<Scalar>> op_;
  Index in_h_ = 0, in_w_ = 0;
};

template <typename Scalar>
Tensor<Scalar> concat_channels(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  if (!a.same_layout(b)) throw ShapeError("concat_channels: spatial layouts differ");
  Tensor<Scalar> out(a.channels() + b.channels(), a.count, a.height, a.width);
  out.data.topRows(a.channels()) = a.data;
  out.data.bottomRows(b.channels()) = b.data;
  return out;
}

template <typename Scalar>
std::pair<Tensor<Scalar>, Tensor<Scalar>> split_channels(const Tensor<Scalar>& g, Index first) {
  Tensor<Scalar> a(first, g.count, g.height, g.width);
  Tensor<Scalar> b(g.channels() - first, g.count, g.height, g.width);
  a.data = g.data.topRows(first);
  b.data = g.data.bottomRows(g.channels() - first);
  return {std::move(a), std::move(b)};
}

}  // namespace loco::nn
