#pragma once

// Dense domain types shared by every module.
//
// All per-pixel fields use one planar layout: a row-major matrix with one row
// per channel and one column per pixel, images of a batch stored back to back
// (column = image * height * width + y * width + x). Pointwise layers are then
// plain matrix products and per-pixel reductions are column reductions.

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "loco/errors.hpp"

namespace loco {

using Index = Eigen::Index;

/// Class index. Classes are 0-based; class 0 is background / normal tissue.
using Label = std::uint8_t;

/// Sentinel for pixels without a usable label (filtered pseudo-labels,
/// padding introduced by augmentation, "void" in ground truth).
inline constexpr Label kIgnore = std::numeric_limits<Label>::max();

template <typename Scalar>
using Planes = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename Scalar>
using Vec = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

/// Batch of C x H x W maps in planar layout.
template <typename Scalar_>
struct Tensor {
  using Scalar = Scalar_;

  Index count = 0;
  Index height = 0;
  Index width = 0;
  Planes<Scalar> data;

  Tensor() = default;
  Tensor(Index channels, Index count_, Index height_, Index width_)
      : count(count_), height(height_), width(width_),
        data(Planes<Scalar>::Zero(channels, count_ * height_ * width_)) {}

  static Tensor zeros(Index channels, Index count, Index height, Index width) {
    return Tensor(channels, count, height, width);
  }
  static Tensor constant(Index channels, Index count, Index height, Index width,
                         Scalar value) {
    Tensor t(channels, count, height, width);
    t.data.setConstant(value);
    return t;
  }

  Index channels() const { return data.rows(); }
  Index plane() const { return height * width; }
  Index pixels() const { return data.cols(); }

  auto image(Index i) { return data.middleCols(i * plane(), plane()); }
  auto image(Index i) const { return data.middleCols(i * plane(), plane()); }

  Scalar& at(Index c, Index n, Index y, Index x) {
    return data(c, n * plane() + y * width + x);
  }
  Scalar at(Index c, Index n, Index y, Index x) const {
    return data(c, n * plane() + y * width + x);
  }

  bool same_layout(const Tensor& o) const {
    return count == o.count && height == o.height && width == o.width;
  }

  template <typename Other>
  Tensor<Other> cast() const {
    Tensor<Other> t;
    t.count = count;
    t.height = height;
    t.width = width;
    t.data = data.template cast<Other>();
    return t;
  }
};

/// Images: D channels (3 for RGB), values in [0, 1].
template <typename Scalar> using Image = Tensor<Scalar>;
/// Per-pixel class probabilities, K channels summing to one.
template <typename Scalar> using ProbMap = Tensor<Scalar>;
/// Penultimate-layer features, D_f channels, possibly at reduced resolution.
template <typename Scalar> using FeatureMap = Tensor<Scalar>;
/// Unit-norm per-pixel embeddings, D_e channels.
template <typename Scalar> using EmbeddingMap = Tensor<Scalar>;

/// Batch of H x W integer label maps, same pixel order as Tensor.
struct LabelMap {
  Index count = 0;
  Index height = 0;
  Index width = 0;
  Eigen::Array<Label, Eigen::Dynamic, 1> values;

  LabelMap() = default;
  LabelMap(Index count_, Index height_, Index width_, Label fill = 0)
      : count(count_), height(height_), width(width_),
        values(Eigen::Array<Label, Eigen::Dynamic, 1>::Constant(count_ * height_ * width_,
                                                                fill)) {}

  Index plane() const { return height * width; }
  Index pixels() const { return values.size(); }

  auto image(Index i) { return values.segment(i * plane(), plane()); }
  auto image(Index i) const { return values.segment(i * plane(), plane()); }

  Label& at(Index n, Index y, Index x) { return values(n * plane() + y * width + x); }
  Label at(Index n, Index y, Index x) const { return values(n * plane() + y * width + x); }

  bool operator==(const LabelMap& o) const {
    return count == o.count && height == o.height && width == o.width &&
           (values == o.values).all();
  }
};

/// Ground-truth labels.
using Mask = LabelMap;
/// Hard pseudo-labels; kIgnore marks filtered pixels.
using PseudoLabelMap = LabelMap;

/// Per-class embeddings obtained by class-wise average pooling.
template <typename Scalar>
struct ClassEmbeddings {
  Planes<Scalar> rows;          // K x D_e, unit norm where present
  std::vector<bool> present;    // absent rows must never be consumed
  std::vector<Index> counts;    // contributing pixels per class
  Planes<Scalar> raw_means;     // K x D_e, mean before renormalisation

  Index classes() const { return rows.rows(); }
  Index present_count() const {
    Index n = 0;
    for (bool p : present) n += p ? 1 : 0;
    return n;
  }
};

template <typename Scalar>
struct LabeledImage {
  Image<Scalar> image;
  Mask mask;
};

/// One training batch: N^l labeled pairs and N^u unlabeled images.
template <typename Scalar>
struct Batch {
  std::vector<LabeledImage<Scalar>> labeled;
  std::vector<Image<Scalar>> unlabeled;
};

// ---------------------------------------------------------------------------
// Batch helpers

template <typename Scalar>
Tensor<Scalar> concat_batch(const std::vector<const Tensor<Scalar>*>& parts) {
  if (parts.empty()) return {};
  const auto& first = *parts.front();
  Index total = 0;
  for (const auto* p : parts) {
    if (p->height != first.height || p->width != first.width ||
        p->channels() != first.channels())
      throw ShapeError("concat_batch: tensors differ in shape");
    total += p->count;
  }
  Tensor<Scalar> out(first.channels(), total, first.height, first.width);
  Index col = 0;
  for (const auto* p : parts) {
    out.data.middleCols(col, p->pixels()) = p->data;
    col += p->pixels();
  }
  return out;
}

template <typename Scalar>
Tensor<Scalar> concat_batch(const std::vector<Tensor<Scalar>>& parts) {
  std::vector<const Tensor<Scalar>*> ptrs;
  ptrs.reserve(parts.size());
  for (const auto& p : parts) ptrs.push_back(&p);
  return concat_batch(ptrs);
}

inline LabelMap concat_labels(const std::vector<const LabelMap*>& parts) {
  if (parts.empty()) return {};
  const auto& first = *parts.front();
  Index total = 0;
  for (const auto* p : parts) {
    if (p->height != first.height || p->width != first.width)
      throw ShapeError("concat_labels: label maps differ in shape");
    total += p->count;
  }
  LabelMap out(total, first.height, first.width);
  Index off = 0;
  for (const auto* p : parts) {
    out.values.segment(off, p->pixels()) = p->values;
    off += p->pixels();
  }
  return out;
}

template <typename Scalar>
Tensor<Scalar> slice_batch(const Tensor<Scalar>& t, Index begin, Index n) {
  Tensor<Scalar> out;
  out.count = n;
  out.height = t.height;
  out.width = t.width;
  out.data = t.data.middleCols(begin * t.plane(), n * t.plane());
  return out;
}

inline LabelMap slice_labels(const LabelMap& m, Index begin, Index n) {
  LabelMap out;
  out.count = n;
  out.height = m.height;
  out.width = m.width;
  out.values = m.values.segment(begin * m.plane(), n * m.plane());
  return out;
}

/// Column-wise softmax of a K-channel logit tensor.
template <typename Scalar>
ProbMap<Scalar> softmax(const Tensor<Scalar>& logits) {
  ProbMap<Scalar> p = logits;
  const auto maxes = logits.data.colwise().maxCoeff().eval();
  p.data = (logits.data.rowwise() - maxes).array().exp().matrix();
  const auto sums = p.data.colwise().sum().eval();
  p.data.array().rowwise() /= sums.array();
  return p;
}

/// Per-pixel argmax; ties resolve to the lowest class index.
template <typename Scalar>
LabelMap argmax(const ProbMap<Scalar>& probs) {
  LabelMap out(probs.count, probs.height, probs.width);
  for (Index p = 0; p < probs.pixels(); ++p) {
    Index best = 0;
    Scalar best_v = probs.data(0, p);
    for (Index c = 1; c < probs.channels(); ++c) {
      if (probs.data(c, p) > best_v) {
        best_v = probs.data(c, p);
        best = c;
      }
    }
    out.values(p) = static_cast<Label>(best);
  }
  return out;
}

template <typename Derived>
bool all_finite(const Eigen::DenseBase<Derived>& m) {
  return m.allFinite();
}

// ---------------------------------------------------------------------------
// Validation

template <typename Scalar>
void check_image(const Image<Scalar>& img, const std::string& field) {
  if (img.height < 8 || img.width < 8)
    throw ShapeError(field + ": image must be at least 8x8, got " +
                     std::to_string(img.height) + "x" + std::to_string(img.width));
  if (img.data.cols() != img.count * img.plane())
    throw ShapeError(field + ": pixel storage does not match extents");
  if (!img.data.allFinite()) throw DomainError(field + ": non-finite pixel values");
  if (img.data.size() > 0 &&
      (img.data.minCoeff() < Scalar(0) || img.data.maxCoeff() > Scalar(1)))
    throw DomainError(field + ": pixel values outside [0, 1]");
}

inline void check_labels(const LabelMap& m, Index classes, const std::string& field) {
  if (m.values.size() != m.count * m.plane())
    throw ShapeError(field + ": label storage does not match extents");
  for (Index i = 0; i < m.values.size(); ++i) {
    const Label v = m.values(i);
    if (v != kIgnore && v >= classes)
      throw DomainError(field + ": label " + std::to_string(int(v)) +
                        " out of range for K=" + std::to_string(classes));
  }
}

/// Returns the batch unchanged if every invariant holds, throws otherwise.
template <typename Scalar>
const Batch<Scalar>& validate(const Batch<Scalar>& batch, Index classes) {
  if (batch.labeled.empty()) throw ShapeError("labeled: batch needs at least one labeled pair");
  const auto& ref = batch.labeled.front().image;
  auto same = [&](const Image<Scalar>& img, const std::string& field) {
    if (img.height != ref.height || img.width != ref.width ||
        img.channels() != ref.channels())
      throw ShapeError(field + ": image shape differs from labeled[0]");
  };
  for (std::size_t i = 0; i < batch.labeled.size(); ++i) {
    const auto& pair = batch.labeled[i];
    const std::string field = "labeled[" + std::to_string(i) + "]";
    check_image(pair.image, field + ".image");
    same(pair.image, field + ".image");
    if (pair.mask.height != pair.image.height || pair.mask.width != pair.image.width ||
        pair.mask.count != pair.image.count)
      throw ShapeError(field + ".mask: shape " + std::to_string(pair.mask.height) + "x" +
                       std::to_string(pair.mask.width) + " does not match image " +
                       std::to_string(pair.image.height) + "x" +
                       std::to_string(pair.image.width));
    check_labels(pair.mask, classes, field + ".mask");
  }
  for (std::size_t i = 0; i < batch.unlabeled.size(); ++i) {
    const std::string field = "unlabeled[" + std::to_string(i) + "]";
    check_image(batch.unlabeled[i], field);
    same(batch.unlabeled[i], field);
  }
  return batch;
}

}  // namespace loco
