#pragma once

// Weak (geometric) and strong (intensity + CutMix) perturbations.
//
// A weak view records its geometry so the same transform can be replayed on
// the original image or mask; strong perturbation never moves pixels except
// through the recorded CutMix rectangle, so teacher pseudo-labels computed on
// the weak view stay aligned with the student's strong view.

#include <algorithm>
#include <array>
#include <cmath>
#include <optional>

#include "loco/resize.hpp"
#include "loco/rng.hpp"
#include "loco/tensor.hpp"

namespace loco {

struct WeakConfig {
  Index crop_h = 64;
  Index crop_w = 64;
  double scale_min = 0.5;
  double scale_max = 2.0;
  double flip_prob = 0.5;
};

struct StrongConfig {
  double jitter_prob = 0.8;
  double brightness = 0.5;
  double contrast = 0.5;
  double saturation = 0.5;
  double hue = 0.25;
  double grayscale_prob = 0.2;
  double blur_prob = 0.5;
  double blur_sigma_min = 0.1;
  double blur_sigma_max = 2.0;
  double cutmix_prob = 0.5;
  double cutmix_area_min = 0.25;
  double cutmix_area_max = 0.5;
};

struct Geometry {
  Index source_h = 0, source_w = 0;
  double scale = 1.0;
  Index scaled_h = 0, scaled_w = 0;
  Index crop_y = 0, crop_x = 0;
  Index crop_h = 0, crop_w = 0;
  bool flip = false;

  bool operator==(const Geometry&) const = default;
};

template <typename Scalar>
struct WeakView {
  Image<Scalar> image;
  std::optional<Mask> mask;
  Geometry geometry;
};

struct CutMixBox {
  Index y0 = 0, x0 = 0, h = 0, w = 0;
  bool contains(Index y, Index x) const { return y >= y0 && y < y0 + h && x >= x0 && x < x0 + w; }
  bool operator==(const CutMixBox&) const = default;
};

template <typename Scalar>
struct StrongView {
  Image<Scalar> image;
  std::optional<CutMixBox> cutmix_box;
  std::optional<Index> source_index;
};

template <typename Scalar>
struct StrongResult {
  StrongView<Scalar> view;
  std::optional<PseudoLabelMap> pseudo;
};

// ---------------------------------------------------------------------------
// Weak perturbation

inline Geometry sample_geometry(Index h, Index w, const WeakConfig& cfg, std::uint64_t seed) {
  Rng rng(seed);
  Geometry g;
  g.source_h = h;
  g.source_w = w;
  g.crop_h = cfg.crop_h;
  g.crop_w = cfg.crop_w;
  g.scale = cfg.scale_min == cfg.scale_max ? cfg.scale_min
                                           : uniform(rng, cfg.scale_min, cfg.scale_max);
  g.scaled_h = std::max<Index>(1, static_cast<Index>(std::lround(double(h) * g.scale)));
  g.scaled_w = std::max<Index>(1, static_cast<Index>(std::lround(double(w) * g.scale)));
  // Too-small scaled images are zero-padded at the bottom/right, not rejected.
  const Index span_y = std::max<Index>(g.scaled_h, g.crop_h) - g.crop_h;
  const Index span_x = std::max<Index>(g.scaled_w, g.crop_w) - g.crop_w;
  g.crop_y = span_y > 0 ? std::uniform_int_distribution<Index>(0, span_y)(rng) : 0;
  g.crop_x = span_x > 0 ? std::uniform_int_distribution<Index>(0, span_x)(rng) : 0;
  g.flip = bernoulli(rng, cfg.flip_prob);
  return g;
}

namespace detail {

// Calls fn(out_pixel, src_y, src_x) for crop pixels that land inside the
// scaled image; the rest are padding.
template <typename Fn>
void for_each_crop_pixel(const Geometry& g, Fn&& fn) {
  for (Index y = 0; y < g.crop_h; ++y) {
    const Index sy = g.crop_y + y;
    if (sy >= g.scaled_h) continue;
    for (Index x = 0; x < g.crop_w; ++x) {
      const Index cx = g.flip ? g.crop_w - 1 - x : x;
      const Index sx = g.crop_x + cx;
      if (sx >= g.scaled_w) continue;
      fn(y * g.crop_w + x, sy, sx);
    }
  }
}

}  // namespace detail

template <typename Scalar>
Image<Scalar> replay(const Geometry& g, const Image<Scalar>& original) {
  if (original.height != g.source_h || original.width != g.source_w || original.count != 1)
    throw ShapeError("replay: image does not match recorded geometry");
  const auto scaled = resize_bilinear(original, g.scaled_h, g.scaled_w);
  Image<Scalar> out(original.channels(), 1, g.crop_h, g.crop_w);
  detail::for_each_crop_pixel(g, [&](Index o, Index sy, Index sx) {
    out.data.col(o) = scaled.data.col(sy * g.scaled_w + sx);
  });
  return out;
}

inline Mask replay(const Geometry& g, const Mask& original) {
  if (original.height != g.source_h || original.width != g.source_w || original.count != 1)
    throw ShapeError("replay: mask does not match recorded geometry");
  const auto scaled = resize_nearest(original, g.scaled_h, g.scaled_w);
  Mask out(1, g.crop_h, g.crop_w, kIgnore);
  detail::for_each_crop_pixel(g, [&](Index o, Index sy, Index sx) {
    out.values(o) = scaled.values(sy * g.scaled_w + sx);
  });
  return out;
}

template <typename Scalar>
WeakView<Scalar> weak_perturb(const Image<Scalar>& image, const std::optional<Mask>& mask,
                              std::uint64_t seed, const WeakConfig& cfg) {
  if (mask && (mask->height != image.height || mask->width != image.width))
    throw ShapeError("weak_perturb: mask shape differs from image");
  WeakView<Scalar> view;
  view.geometry = sample_geometry(image.height, image.width, cfg, seed);
  view.image = replay(view.geometry, image);
  if (mask) view.mask = replay(view.geometry, *mask);
  return view;
}

// ---------------------------------------------------------------------------
// Intensity operations (3-channel RGB; other channel counts only get
// brightness, contrast and blur).

namespace detail {

template <typename Scalar>
void clamp01(Image<Scalar>& img) {
  img.data = img.data.cwiseMax(Scalar(0)).cwiseMin(Scalar(1));
}

template <typename Scalar>
Eigen::Matrix<Scalar, 1, Eigen::Dynamic> luma(const Image<Scalar>& img) {
  if (img.channels() != 3) return img.data.colwise().mean();
  return Scalar(0.299) * img.data.row(0) + Scalar(0.587) * img.data.row(1) +
         Scalar(0.114) * img.data.row(2);
}

template <typename Scalar>
void shift_hue(Image<Scalar>& img, double shift) {
  for (Index p = 0; p < img.pixels(); ++p) {
    const double r = img.data(0, p), g = img.data(1, p), b = img.data(2, p);
    const double mx = std::max({r, g, b}), mn = std::min({r, g, b});
    const double v = mx, d = mx - mn;
    const double s = mx > 0.0 ? d / mx : 0.0;
    double h = 0.0;
    if (d > 0.0) {
      if (mx == r) h = std::fmod((g - b) / d, 6.0);
      else if (mx == g) h = (b - r) / d + 2.0;
      else h = (r - g) / d + 4.0;
      h /= 6.0;
    }
    h = h + shift;
    h -= std::floor(h);
    const double hh = h * 6.0;
    const int sector = static_cast<int>(std::floor(hh)) % 6;
    const double f = hh - std::floor(hh);
    const double pv = v * (1.0 - s), qv = v * (1.0 - s * f), tv = v * (1.0 - s * (1.0 - f));
    std::array<double, 3> rgb{};
    switch (sector) {
      case 0: rgb = {v, tv, pv}; break;
      case 1: rgb = {qv, v, pv}; break;
      case 2: rgb = {pv, v, tv}; break;
      case 3: rgb = {pv, qv, v}; break;
      case 4: rgb = {tv, pv, v}; break;
      default: rgb = {v, pv, qv}; break;
    }
    for (int c = 0; c < 3; ++c) img.data(c, p) = Scalar(rgb[c]);
  }
}

template <typename Scalar>
void gaussian_blur(Image<Scalar>& img, double sigma) {
  const Index radius = std::min<Index>(static_cast<Index>(std::ceil(3.0 * sigma)),
                                       std::min(img.height, img.width) / 2);
  if (radius <= 0) return;
  std::vector<double> k(static_cast<std::size_t>(2 * radius + 1));
  double sum = 0.0;
  for (Index i = -radius; i <= radius; ++i) {
    k[std::size_t(i + radius)] = std::exp(-0.5 * double(i * i) / (sigma * sigma));
    sum += k[std::size_t(i + radius)];
  }
  for (auto& v : k) v /= sum;
  const Index h = img.height, w = img.width;
  Planes<Scalar> tmp(img.data.rows(), img.data.cols());
  auto clampi = [](Index v, Index n) { return std::clamp<Index>(v, 0, n - 1); };
  for (Index y = 0; y < h; ++y)
    for (Index x = 0; x < w; ++x) {
      Vec<Scalar> acc = Vec<Scalar>::Zero(img.channels());
      for (Index i = -radius; i <= radius; ++i)
        acc += Scalar(k[std::size_t(i + radius)]) * img.data.col(y * w + clampi(x + i, w));
      tmp.col(y * w + x) = acc;
    }
  for (Index y = 0; y < h; ++y)
    for (Index x = 0; x < w; ++x) {
      Vec<Scalar> acc = Vec<Scalar>::Zero(img.channels());
      for (Index i = -radius; i <= radius; ++i)
        acc += Scalar(k[std::size_t(i + radius)]) * tmp.col(clampi(y + i, h) * w + x);
      img.data.col(y * w + x) = acc;
    }
}

// Multiplicative factor in [1 - m, 1 + m]; exactly 1 (and no draw) when m = 0.
inline double jitter_factor(Rng& rng, double magnitude) {
  if (magnitude <= 0.0) return 1.0;
  return uniform(rng, std::max(0.0, 1.0 - magnitude), 1.0 + magnitude);
}

}  // namespace detail

/// Colour jitter, random grayscale and Gaussian blur; geometry untouched.
template <typename Scalar>
Image<Scalar> intensity_perturb(const Image<Scalar>& image, std::uint64_t seed,
                                const StrongConfig& cfg) {
  Rng rng(seed);
  Image<Scalar> img = image;
  const bool rgb = img.channels() == 3;
  if (bernoulli(rng, cfg.jitter_prob)) {
    const double b = detail::jitter_factor(rng, cfg.brightness);
    const double c = detail::jitter_factor(rng, cfg.contrast);
    const double s = detail::jitter_factor(rng, cfg.saturation);
    const double h = cfg.hue > 0.0 ? uniform(rng, -cfg.hue, cfg.hue) : 0.0;
    if (b != 1.0) {
      img.data *= Scalar(b);
      detail::clamp01(img);
    }
    if (c != 1.0) {
      const Scalar mean = detail::luma(img).mean();
      img.data = ((img.data.array() - mean) * Scalar(c) + mean).matrix();
      detail::clamp01(img);
    }
    if (s != 1.0 && rgb) {
      const auto gray = detail::luma(img).eval();
      img.data = ((img.data.rowwise() - gray) * Scalar(s)).rowwise() + gray;
      detail::clamp01(img);
    }
    if (h != 0.0 && rgb) detail::shift_hue(img, h);
  }
  if (rgb && bernoulli(rng, cfg.grayscale_prob)) {
    const auto gray = detail::luma(img).eval();
    for (Index ch = 0; ch < 3; ++ch) img.data.row(ch) = gray;
  }
  if (bernoulli(rng, cfg.blur_prob)) {
    detail::gaussian_blur(img, uniform(rng, cfg.blur_sigma_min, cfg.blur_sigma_max));
    detail::clamp01(img);
  }
  return img;
}

inline CutMixBox sample_cutmix_box(Index h, Index w, Rng& rng, const StrongConfig& cfg) {
  const double area = uniform(rng, cfg.cutmix_area_min, std::max(cfg.cutmix_area_min, cfg.cutmix_area_max)) *
                      double(h * w);
  const double ratio = std::exp(uniform(rng, std::log(0.5), std::log(2.0)));
  CutMixBox box;
  box.h = std::clamp<Index>(static_cast<Index>(std::lround(std::sqrt(area * ratio))), 1, h);
  box.w = std::clamp<Index>(static_cast<Index>(std::lround(std::sqrt(area / ratio))), 1, w);
  box.y0 = std::uniform_int_distribution<Index>(0, h - box.h)(rng);
  box.x0 = std::uniform_int_distribution<Index>(0, w - box.w)(rng);
  return box;
}

/// Pastes partner pixels (and partner pseudo-labels) inside `box`.
template <typename Scalar>
void apply_cutmix(Image<Scalar>& image, std::optional<PseudoLabelMap>& pseudo,
                  const Image<Scalar>& partner, const PseudoLabelMap* partner_pseudo,
                  const CutMixBox& box) {
  for (Index y = box.y0; y < box.y0 + box.h; ++y)
    for (Index x = box.x0; x < box.x0 + box.w; ++x) {
      const Index p = y * image.width + x;
      image.data.col(p) = partner.data.col(p);
      if (pseudo && partner_pseudo) pseudo->values(p) = partner_pseudo->values(p);
    }
}

/// Strong perturbation of a weak view. When `partner` is given and CutMix
/// fires, a rectangle of the partner image replaces the same region of the
/// intensity-perturbed view and the pseudo-label map is mixed identically.
template <typename Scalar>
StrongResult<Scalar> strong_perturb(const WeakView<Scalar>& view,
                                    const std::optional<PseudoLabelMap>& own_pseudo,
                                    const WeakView<Scalar>* partner,
                                    const PseudoLabelMap* partner_pseudo,
                                    std::optional<Index> partner_index, std::uint64_t seed,
                                    const StrongConfig& cfg) {
  const auto& img = view.image;
  if (own_pseudo && (own_pseudo->height != img.height || own_pseudo->width != img.width))
    throw ShapeError("strong_perturb: pseudo-label map shape differs from view");
  if (partner) {
    const auto& pi = partner->image;
    if (pi.height != img.height || pi.width != img.width || pi.channels() != img.channels())
      throw ShapeError("strong_perturb: partner shape differs from view");
    if (partner_pseudo &&
        (partner_pseudo->height != img.height || partner_pseudo->width != img.width))
      throw ShapeError("strong_perturb: partner pseudo-label shape differs from view");
  }
  StrongResult<Scalar> out;
  out.view.image = intensity_perturb(img, derive_seed(seed, {1}), cfg);
  out.pseudo = own_pseudo;
  if (partner) {
    Rng rng(derive_seed(seed, {2}));
    if (bernoulli(rng, cfg.cutmix_prob)) {
      const auto box = sample_cutmix_box(img.height, img.width, rng, cfg);
      apply_cutmix(out.view.image, out.pseudo, partner->image, partner_pseudo, box);
      out.view.cutmix_box = box;
      out.view.source_index = partner_index;
    }
  }
  return out;
}

/// Horizontal flip of a single image (used by tests and diagnostics).
template <typename Scalar>
Image<Scalar> hflip(const Image<Scalar>& image) {
  Image<Scalar> out = image;
  for (Index n = 0; n < image.count; ++n)
    for (Index y = 0; y < image.height; ++y)
      for (Index x = 0; x < image.width; ++x)
        out.data.col(n * image.plane() + y * image.width + x) =
            image.data.col(n * image.plane() + y * image.width + image.width - 1 - x);
  return out;
}

}  // namespace loco
