#pragma once

// Low-contrast-enhanced contrastive learning.
//
// Embeddings: a pointwise two-layer MLP on penultimate features, bilinearly
// upsampled to image size and L2-normalised per pixel. Class embeddings are
// the renormalised class-wise means over labeled pixels. Hard pixels enter the
// low-contrast set H from two selectors:
//   * inter-class: per class, the k% pixels least similar to their class embedding;
//   * boundary: the k% boundary pixels whose minimum similarity to their h
//     nearest neighbours is highest.
// The loss pulls every anchor in H toward its class embedding against the
// exp-similarities of the other-class members of H to that same embedding.

#include <algorithm>
#include <cmath>
#include <optional>
#include <utility>
#include <vector>

#include "loco/nn/param.hpp"
#include "loco/resize.hpp"
#include "loco/rng.hpp"
#include "loco/tensor.hpp"

namespace loco {

struct LccConfig {
  double k_percent = 30.0;
  Index neighborhood_h = 64;
  double temperature = 0.1;
  Index embedding_dim = 64;
  bool class_embedding_grad = true;
};

enum class Origin : std::uint8_t { labeled, unlabeled };

struct LowContrastEntry {
  Index pixel = 0;  // batch column: image * H * W + y * W + x
  Label cls = 0;
  Origin origin = Origin::labeled;

  bool operator==(const LowContrastEntry&) const = default;
};

struct LowContrastSet {
  std::vector<LowContrastEntry> entries;

  std::size_t size() const { return entries.size(); }
  bool empty() const { return entries.empty(); }
};

/// Per-pixel score with a validity flag (similarities are only defined on
/// labelled / boundary pixels).
template <typename Scalar>
struct PixelScores {
  Index count = 0, height = 0, width = 0;
  Eigen::Array<Scalar, Eigen::Dynamic, 1> values;
  Eigen::Array<bool, Eigen::Dynamic, 1> valid;

  PixelScores() = default;
  PixelScores(Index n, Index h, Index w)
      : count(n), height(h), width(w),
        values(Eigen::Array<Scalar, Eigen::Dynamic, 1>::Zero(n * h * w)),
        valid(Eigen::Array<bool, Eigen::Dynamic, 1>::Constant(n * h * w, false)) {}

  Index plane() const { return height * width; }
  Index valid_count() const { return valid.count(); }
};

// ---------------------------------------------------------------------------
// Projector

/// Two-layer pointwise MLP: D_f -> D_f (ReLU) -> D_e.
template <typename Scalar>
class Projector {
  static constexpr Scalar kNormFloor = Scalar(1e-12);

 public:
  Projector() = default;
  Projector(Index feature_dim, Index embedding_dim, std::uint64_t seed)
      : w1_("projector.w1", feature_dim, feature_dim), b1_("projector.b1", feature_dim, 1),
        w2_("projector.w2", embedding_dim, feature_dim), b2_("projector.b2", embedding_dim, 1) {
    Rng gen(seed);
    nn::he_normal(w1_, feature_dim, gen);
    nn::he_normal(w2_, feature_dim, gen);
  }

  Index feature_dim() const { return w1_.value.cols(); }
  Index embedding_dim() const { return w2_.value.rows(); }

  std::vector<nn::Param<Scalar>*> parameters() { return {&w1_, &b1_, &w2_, &b2_}; }
  std::vector<const nn::Param<Scalar>*> parameters() const { return {&w1_, &b1_, &w2_, &b2_}; }

  /// Features -> unit-norm embeddings at (height, width). Caches what
  /// backward() needs.
  EmbeddingMap<Scalar> forward(const FeatureMap<Scalar>& features, Index height, Index width) {
    if (features.channels() != feature_dim())
      throw ShapeError("project: feature channels do not match projector input");
    if (height < features.height || width < features.width)
      throw ShapeError("project: target size smaller than feature map");
    in_ = features;
    hidden_ = (w1_.value * features.data).colwise() + b1_.value.col(0);
    hidden_ = hidden_.cwiseMax(Scalar(0));
    Tensor<Scalar> low;
    low.count = features.count;
    low.height = features.height;
    low.width = features.width;
    low.data = (w2_.value * hidden_).colwise() + b2_.value.col(0);
    up_op_.reset();
    if (height != features.height || width != features.width)
      up_op_ = bilinear_operator<Scalar>(features.height, features.width, height, width);
    Tensor<Scalar> up(embedding_dim(), features.count, height, width);
    for (Index i = 0; i < features.count; ++i)
      up.image(i) = up_op_ ? Planes<Scalar>(low.image(i) * *up_op_) : Planes<Scalar>(low.image(i));
    norms_ = up.data.colwise().norm().transpose().cwiseMax(kNormFloor);
    out_ = up;
    out_.data.array().rowwise() /= norms_.transpose().array();
    return out_;
  }

  /// Accumulates parameter gradients; returns d loss / d features.
  FeatureMap<Scalar> backward(const Planes<Scalar>& grad_embeddings) {
    // through per-pixel normalisation
    auto dots = (out_.data.cwiseProduct(grad_embeddings)).colwise().sum().eval();
    for (Index p = 0; p < dots.size(); ++p)
      if (norms_(p) <= kNormFloor) dots(p) = Scalar(0);  // clamped pixels scale linearly
    Planes<Scalar> g_up = grad_embeddings - (out_.data.array().rowwise() * dots.array()).matrix();
    g_up.array().rowwise() /= norms_.transpose().array();
    // through bilinear upsampling
    Planes<Scalar> g_low(embedding_dim(), in_.pixels());
    for (Index i = 0; i < in_.count; ++i) {
      auto src = g_up.middleCols(i * out_.plane(), out_.plane());
      auto dst = g_low.middleCols(i * in_.plane(), in_.plane());
      if (up_op_) dst = src * up_op_->transpose();
      else dst = src;
    }
    w2_.grad.noalias() += g_low * hidden_.transpose();
    b2_.grad.col(0) += g_low.rowwise().sum();
    Planes<Scalar> g_hidden = w2_.value.transpose() * g_low;
    g_hidden = g_hidden.cwiseProduct((hidden_.array() > Scalar(0)).template cast<Scalar>().matrix());
    w1_.grad.noalias() += g_hidden * in_.data.transpose();
    b1_.grad.col(0) += g_hidden.rowwise().sum();
    FeatureMap<Scalar> g_in = in_;
    g_in.data = w1_.value.transpose() * g_hidden;
    return g_in;
  }

 private:
  nn::Param<Scalar> w1_, b1_, w2_, b2_;
  FeatureMap<Scalar> in_;
  Planes<Scalar> hidden_;
  std::optional<Interp<Scalar>> up_op_;
  Vec<Scalar> norms_;
  EmbeddingMap<Scalar> out_;
};

template <typename Scalar>
EmbeddingMap<Scalar> project(const FeatureMap<Scalar>& features, Index height, Index width,
                             Projector<Scalar>& projector) {
  return projector.forward(features, height, width);
}

// ---------------------------------------------------------------------------
// Class embeddings

template <typename Scalar>
ClassEmbeddings<Scalar> class_embeddings(const EmbeddingMap<Scalar>& embeddings,
                                         const Mask& masks, Index classes) {
  if (masks.values.size() != embeddings.pixels())
    throw ShapeError("class_embeddings: masks and embeddings are not aligned");
  const Index d = embeddings.channels();
  ClassEmbeddings<Scalar> ce;
  ce.rows = Planes<Scalar>::Zero(classes, d);
  ce.raw_means = Planes<Scalar>::Zero(classes, d);
  ce.present.assign(std::size_t(classes), false);
  ce.counts.assign(std::size_t(classes), 0);
  Index labelled = 0;
  for (Index p = 0; p < embeddings.pixels(); ++p) {
    const Label c = masks.values(p);
    if (c == kIgnore) continue;
    if (c >= classes) throw DomainError("class_embeddings: label out of range");
    ce.raw_means.row(c) += embeddings.data.col(p).transpose();
    ++ce.counts[c];
    ++labelled;
  }
  if (labelled == 0) throw DomainError("class_embeddings: no labelled pixels");
  for (Index c = 0; c < classes; ++c) {
    if (ce.counts[std::size_t(c)] == 0) continue;
    ce.raw_means.row(c) /= Scalar(ce.counts[std::size_t(c)]);
    const Scalar n = ce.raw_means.row(c).norm();
    if (!(n >= Scalar(1e-8))) continue;  // symmetric cancellation: degenerate
    ce.rows.row(c) = ce.raw_means.row(c) / n;
    ce.present[std::size_t(c)] = true;
  }
  return ce;
}

/// Adds d loss / d embeddings given d loss / d class-embedding rows.
template <typename Scalar>
void class_embeddings_backward(const ClassEmbeddings<Scalar>& ce, const Mask& masks,
                               const Planes<Scalar>& grad_rows, Planes<Scalar>& grad_embeddings) {
  Planes<Scalar> g_mean = Planes<Scalar>::Zero(ce.classes(), ce.rows.cols());
  for (Index c = 0; c < ce.classes(); ++c) {
    if (!ce.present[std::size_t(c)]) continue;
    const auto zhat = ce.rows.row(c);
    const auto g = grad_rows.row(c);
    const Scalar n = ce.raw_means.row(c).norm();
    g_mean.row(c) = (g - zhat * zhat.dot(g)) / (n * Scalar(ce.counts[std::size_t(c)]));
  }
  for (Index p = 0; p < masks.values.size(); ++p) {
    const Label c = masks.values(p);
    if (c == kIgnore || !ce.present[c]) continue;
    grad_embeddings.col(p) += g_mean.row(c).transpose();
  }
}

// ---------------------------------------------------------------------------
// Similarities and selection

/// s_c(p) = z(p) . zbar_{label(p)} for labelled pixels of present classes.
template <typename Scalar>
PixelScores<Scalar> class_similarity(const EmbeddingMap<Scalar>& embeddings, const LabelMap& labels,
                                     const ClassEmbeddings<Scalar>& ce) {
  if (labels.values.size() != embeddings.pixels())
    throw ShapeError("class_similarity: labels and embeddings are not aligned");
  PixelScores<Scalar> s(embeddings.count, embeddings.height, embeddings.width);
  for (Index p = 0; p < embeddings.pixels(); ++p) {
    const Label c = labels.values(p);
    if (c == kIgnore || c >= ce.classes() || !ce.present[c]) continue;
    s.values(p) = embeddings.data.col(p).dot(ce.rows.row(c).transpose());
    s.valid(p) = true;
  }
  return s;
}

/// ceil(k% * n), robust to k * n / 100 landing a rounding error above an integer.
inline Index top_k_count(double k_percent, Index n) {
  if (n <= 0 || k_percent <= 0.0) return 0;
  if (k_percent >= 100.0) return n;
  const double exact = k_percent * double(n) / 100.0;
  const double nearest = std::round(exact);
  const double v = std::abs(exact - nearest) < 1e-9 ? nearest : std::ceil(exact);
  return std::min<Index>(n, static_cast<Index>(v));
}

namespace detail {

inline Origin origin_of(Index pixel, Index plane, Index labeled_images) {
  return pixel / plane < labeled_images ? Origin::labeled : Origin::unlabeled;
}

// Selects the `keep` best candidates; ascending or descending score, ties by
// ascending pixel index (image index, then row-major position).
template <typename Scalar>
std::vector<Index> pick(std::vector<std::pair<Scalar, Index>> cand, Index keep, bool lowest) {
  auto cmp = [lowest](const auto& a, const auto& b) {
    if (a.first != b.first) return lowest ? a.first < b.first : a.first > b.first;
    return a.second < b.second;
  };
  keep = std::min<Index>(keep, Index(cand.size()));
  std::partial_sort(cand.begin(), cand.begin() + keep, cand.end(), cmp);
  std::vector<Index> out;
  out.reserve(std::size_t(keep));
  for (Index i = 0; i < keep; ++i) out.push_back(cand[std::size_t(i)].second);
  return out;
}

}  // namespace detail

/// Per class over the whole batch: ceil(k% * n_c) pixels with lowest s_c.
/// Images with index < labeled_images are tagged as labeled origin.
template <typename Scalar>
LowContrastSet select_ice(const PixelScores<Scalar>& similarities, const LabelMap& labels,
                          Index classes, const LccConfig& cfg, Index labeled_images) {
  std::vector<std::vector<std::pair<Scalar, Index>>> per_class(static_cast<std::size_t>(classes));
  for (Index p = 0; p < similarities.values.size(); ++p) {
    if (!similarities.valid(p)) continue;
    const Label c = labels.values(p);
    if (c == kIgnore || c >= classes) continue;
    per_class[c].emplace_back(similarities.values(p), p);
  }
  LowContrastSet set;
  for (Index c = 0; c < classes; ++c) {
    auto& cand = per_class[std::size_t(c)];
    const Index keep = top_k_count(cfg.k_percent, Index(cand.size()));
    for (Index p : detail::pick(std::move(cand), keep, true))
      set.entries.push_back({p, static_cast<Label>(c),
                             detail::origin_of(p, similarities.plane(), labeled_images)});
  }
  return set;
}

/// The h nearest non-zero grid offsets by Euclidean distance, ties in
/// row-major (dy, dx) order.
inline std::vector<std::pair<Index, Index>> neighbor_offsets(Index h) {
  std::vector<std::pair<Index, Index>> offs;
  if (h <= 0) return offs;
  const Index r = static_cast<Index>(std::ceil(std::sqrt(double(h)))) + 1;
  for (Index dy = -r; dy <= r; ++dy)
    for (Index dx = -r; dx <= r; ++dx)
      if (dy != 0 || dx != 0) offs.emplace_back(dy, dx);
  std::stable_sort(offs.begin(), offs.end(), [](const auto& a, const auto& b) {
    const Index da = a.first * a.first + a.second * a.second;
    const Index db = b.first * b.first + b.second * b.second;
    if (da != db) return da < db;
    return a < b;
  });
  offs.resize(std::size_t(h));
  return offs;
}

/// Pixel flagged iff one of its h nearest in-image neighbours carries a
/// different (non-ignore) label. Ignore pixels are never flagged.
inline Eigen::Array<bool, Eigen::Dynamic, 1> boundary_mask(const LabelMap& labels,
                                                           const LccConfig& cfg) {
  const auto offs = neighbor_offsets(cfg.neighborhood_h);
  Eigen::Array<bool, Eigen::Dynamic, 1> out =
      Eigen::Array<bool, Eigen::Dynamic, 1>::Constant(labels.pixels(), false);
  const Index h = labels.height, w = labels.width;
  for (Index n = 0; n < labels.count; ++n)
    for (Index y = 0; y < h; ++y)
      for (Index x = 0; x < w; ++x) {
        const Label c = labels.at(n, y, x);
        if (c == kIgnore) continue;
        for (const auto& [dy, dx] : offs) {
          const Index yy = y + dy, xx = x + dx;
          if (yy < 0 || yy >= h || xx < 0 || xx >= w) continue;
          const Label o = labels.at(n, yy, xx);
          if (o != kIgnore && o != c) {
            out(n * h * w + y * w + x) = true;
            break;
          }
        }
      }
  return out;
}

/// s_b(p) = min over the h nearest in-image neighbours of z(p) . z(q).
template <typename Scalar>
PixelScores<Scalar> boundary_similarity(const EmbeddingMap<Scalar>& embeddings,
                                        const Eigen::Array<bool, Eigen::Dynamic, 1>& boundary,
                                        const LccConfig& cfg) {
  if (boundary.size() != embeddings.pixels())
    throw ShapeError("boundary_similarity: boundary mask and embeddings are not aligned");
  const auto offs = neighbor_offsets(cfg.neighborhood_h);
  PixelScores<Scalar> s(embeddings.count, embeddings.height, embeddings.width);
  const Index h = embeddings.height, w = embeddings.width;
  for (Index n = 0; n < embeddings.count; ++n)
    for (Index y = 0; y < h; ++y)
      for (Index x = 0; x < w; ++x) {
        const Index p = n * h * w + y * w + x;
        if (!boundary(p)) continue;
        const auto zp = embeddings.data.col(p);
        Scalar best = std::numeric_limits<Scalar>::infinity();
        bool any = false;
        for (const auto& [dy, dx] : offs) {
          const Index yy = y + dy, xx = x + dx;
          if (yy < 0 || yy >= h || xx < 0 || xx >= w) continue;
          best = std::min(best, zp.dot(embeddings.data.col(n * h * w + yy * w + xx)));
          any = true;
        }
        if (!any) continue;
        s.values(p) = best;
        s.valid(p) = true;
      }
  return s;
}

/// ceil(k% * n_b) boundary pixels with the highest s_b over the batch.
template <typename Scalar>
LowContrastSet select_bce(const PixelScores<Scalar>& boundary_scores, const LabelMap& labels,
                          const LccConfig& cfg, Index labeled_images) {
  std::vector<std::pair<Scalar, Index>> cand;
  for (Index p = 0; p < boundary_scores.values.size(); ++p)
    if (boundary_scores.valid(p) && labels.values(p) != kIgnore)
      cand.emplace_back(boundary_scores.values(p), p);
  const Index keep = top_k_count(cfg.k_percent, Index(cand.size()));
  LowContrastSet set;
  for (Index p : detail::pick(std::move(cand), keep, false))
    set.entries.push_back(
        {p, labels.values(p), detail::origin_of(p, boundary_scores.plane(), labeled_images)});
  return set;
}

/// Set union keeping first occurrences in order.
inline LowContrastSet merge(const LowContrastSet& a, const LowContrastSet& b) {
  LowContrastSet out = a;
  std::vector<Index> seen;
  seen.reserve(a.size());
  for (const auto& e : a.entries) seen.push_back(e.pixel);
  std::sort(seen.begin(), seen.end());
  for (const auto& e : b.entries)
    if (!std::binary_search(seen.begin(), seen.end(), e.pixel)) out.entries.push_back(e);
  return out;
}

/// Entry embeddings as columns (D_e x |H|).
template <typename Scalar>
Planes<Scalar> gather(const LowContrastSet& set, const EmbeddingMap<Scalar>& embeddings) {
  Planes<Scalar> z(embeddings.channels(), Index(set.size()));
  for (std::size_t i = 0; i < set.size(); ++i)
    z.col(Index(i)) = embeddings.data.col(set.entries[i].pixel);
  return z;
}

// ---------------------------------------------------------------------------
// Loss

template <typename Scalar>
struct LccLoss {
  Scalar value = 0;
  Planes<Scalar> grad_entries;     // D_e x |H|
  Planes<Scalar> grad_class_rows;  // K x D_e
  Index active_classes = 0;
};

/// Contrastive loss over H. `z` holds one entry embedding per column,
/// `cls` its class. Classes without anchors are left out of the class
/// average; an anchor class without negatives contributes exactly zero.
template <typename Scalar>
LccLoss<Scalar> lcc_loss(const Planes<Scalar>& z, const std::vector<Label>& cls,
                         const ClassEmbeddings<Scalar>& ce, const LccConfig& cfg) {
  const Index m = z.cols();
  LccLoss<Scalar> out;
  out.grad_entries = Planes<Scalar>::Zero(z.rows(), m);
  out.grad_class_rows = Planes<Scalar>::Zero(ce.classes(), ce.rows.cols());
  if (m == 0) return out;
  if (Index(cls.size()) != m) throw ShapeError("lcc_loss: one class per entry required");
  std::vector<Index> anchors(std::size_t(ce.classes()), 0);
  for (Label c : cls) {
    if (c >= ce.classes() || !ce.present[c])
      throw DomainError("lcc_loss: entry class has no class embedding");
    ++anchors[c];
  }
  for (Index a : anchors) out.active_classes += a > 0 ? 1 : 0;
  const Scalar inv_tau = Scalar(1.0 / cfg.temperature);

  double total = 0.0;
  Vec<Scalar> g_logit(m);
  for (Index c = 0; c < ce.classes(); ++c) {
    const Index n_anchor = anchors[std::size_t(c)];
    if (n_anchor == 0) continue;
    if (n_anchor == m) continue;  // no negatives: log 1 = 0 for every anchor
    const auto zhat = ce.rows.row(c);
    const Vec<Scalar> logits = (zhat * z).transpose() * inv_tau;
    const Scalar shift = logits.maxCoeff();
    Vec<Scalar> e = (logits.array() - shift).exp().matrix();
    double neg_sum = 0.0;
    for (Index j = 0; j < m; ++j)
      if (cls[std::size_t(j)] != c) neg_sum += double(e(j));
    const double w = 1.0 / (double(out.active_classes) * double(n_anchor));
    double inv_den_sum = 0.0;
    g_logit.setZero();
    for (Index i = 0; i < m; ++i) {
      if (cls[std::size_t(i)] != c) continue;
      const double den = double(e(i)) + neg_sum;
      total += w * (std::log(den) - (double(logits(i)) - double(shift)));
      g_logit(i) = Scalar(w * (double(e(i)) / den - 1.0));
      inv_den_sum += 1.0 / den;
    }
    for (Index j = 0; j < m; ++j)
      if (cls[std::size_t(j)] != c) g_logit(j) = Scalar(w * double(e(j)) * inv_den_sum);
    out.grad_entries.noalias() += zhat.transpose() * (g_logit.transpose() * inv_tau);
    if (cfg.class_embedding_grad)
      out.grad_class_rows.row(c) += (z * g_logit).transpose() * inv_tau;
  }
  out.value = Scalar(total);
  return out;
}

template <typename Scalar>
LccLoss<Scalar> lcc_loss(const LowContrastSet& set, const EmbeddingMap<Scalar>& embeddings,
                         const ClassEmbeddings<Scalar>& ce, const LccConfig& cfg) {
  std::vector<Label> cls;
  cls.reserve(set.size());
  for (const auto& e : set.entries) cls.push_back(e.cls);
  return lcc_loss(gather(set, embeddings), cls, ce, cfg);
}

/// Drops entries whose class has no class embedding in this batch.
template <typename Scalar>
LowContrastSet restrict_to_present(const LowContrastSet& set, const ClassEmbeddings<Scalar>& ce) {
  LowContrastSet out;
  for (const auto& e : set.entries)
    if (e.cls < ce.classes() && ce.present[e.cls]) out.entries.push_back(e);
  return out;
}

// ---------------------------------------------------------------------------
// Diagnostics

/// Mean pairwise dot product between present class embeddings.
template <typename Scalar>
std::optional<double> interclass_similarity(const ClassEmbeddings<Scalar>& ce) {
  double sum = 0.0;
  Index pairs = 0;
  for (Index a = 0; a < ce.classes(); ++a)
    for (Index b = a + 1; b < ce.classes(); ++b)
      if (ce.present[std::size_t(a)] && ce.present[std::size_t(b)]) {
        sum += double(ce.rows.row(a).dot(ce.rows.row(b)));
        ++pairs;
      }
  if (pairs == 0) return std::nullopt;
  return sum / double(pairs);
}

/// 8-bit grayscale heat map of one image's scores: [-1, 1] -> [0, 255];
/// pixels without a score are 0.
template <typename Scalar>
std::vector<std::uint8_t> heatmap_bytes(const PixelScores<Scalar>& scores, Index image) {
  std::vector<std::uint8_t> out(std::size_t(scores.plane()), 0);
  for (Index p = 0; p < scores.plane(); ++p) {
    const Index q = image * scores.plane() + p;
    if (!scores.valid(q)) continue;
    const double v = std::clamp(double(scores.values(q)), -1.0, 1.0);
    out[std::size_t(p)] = static_cast<std::uint8_t>(std::lround((v + 1.0) * 127.5));
  }
  return out;
}

}  // namespace loco
