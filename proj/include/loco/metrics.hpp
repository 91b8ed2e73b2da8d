#pragma once

// Overlap and surface metrics with dataset-level aggregation.

#include <functional>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "loco/datasets.hpp"
#include "loco/tensor.hpp"

namespace loco {

namespace detail {

inline void check_aligned(const Mask& pred, const Mask& truth) {
  if (pred.count != truth.count || pred.height != truth.height || pred.width != truth.width)
    throw ShapeError("metrics: prediction and truth shapes differ");
}

struct Overlap {
  Index inter = 0, pred = 0, truth = 0;
};

inline Overlap overlap(const Mask& pred, const Mask& truth, Label c) {
  check_aligned(pred, truth);
  Overlap o;
  for (Index i = 0; i < truth.pixels(); ++i) {
    if (truth.values(i) == kIgnore) continue;
    const bool a = pred.values(i) == c, b = truth.values(i) == c;
    o.inter += a && b;
    o.pred += a;
    o.truth += b;
  }
  return o;
}

// Membership of class c; truth-IGNORE pixels are outside both sets.
inline std::vector<char> member(const Mask& m, const Mask& truth, Label c) {
  std::vector<char> out(static_cast<std::size_t>(m.pixels()));
  for (Index i = 0; i < m.pixels(); ++i)
    out[std::size_t(i)] = truth.values(i) != kIgnore && m.values(i) == c;
  return out;
}

// Pixels of the set that touch the image border or a 4-neighbour outside it.
inline std::vector<char> surface(const std::vector<char>& in, Index count, Index h, Index w) {
  std::vector<char> out(in.size(), 0);
  for (Index n = 0; n < count; ++n)
    for (Index y = 0; y < h; ++y)
      for (Index x = 0; x < w; ++x) {
        const Index p = n * h * w + y * w + x;
        if (!in[std::size_t(p)]) continue;
        out[std::size_t(p)] = y == 0 || x == 0 || y == h - 1 || x == w - 1 ||
                              !in[std::size_t(p - w)] || !in[std::size_t(p + w)] ||
                              !in[std::size_t(p - 1)] || !in[std::size_t(p + 1)];
      }
  return out;
}

struct SurfaceCounts {
  Index hits = 0, total = 0;
};

// Points of `from` within `tol` of some point of `to`, image by image.
inline SurfaceCounts within(const std::vector<char>& from, const std::vector<char>& to,
                            Index count, Index h, Index w, double tol) {
  const Index r = Index(std::floor(tol));
  const double tol2 = tol * tol;
  SurfaceCounts s;
  for (Index n = 0; n < count; ++n)
    for (Index y = 0; y < h; ++y)
      for (Index x = 0; x < w; ++x) {
        if (!from[std::size_t(n * h * w + y * w + x)]) continue;
        ++s.total;
        bool hit = false;
        for (Index dy = -r; dy <= r && !hit; ++dy)
          for (Index dx = -r; dx <= r && !hit; ++dx) {
            const Index yy = y + dy, xx = x + dx;
            if (yy < 0 || xx < 0 || yy >= h || xx >= w) continue;
            if (double(dy * dy + dx * dx) > tol2) continue;
            hit = to[std::size_t(n * h * w + yy * w + xx)];
          }
        s.hits += hit;
      }
  return s;
}

inline SurfaceCounts nsd_counts(const Mask& pred, const Mask& truth, Label c, double tol) {
  check_aligned(pred, truth);
  const auto a = surface(member(pred, truth, c), pred.count, pred.height, pred.width);
  const auto b = surface(member(truth, truth, c), truth.count, truth.height, truth.width);
  const auto ab = within(a, b, pred.count, pred.height, pred.width, tol);
  const auto ba = within(b, a, pred.count, pred.height, pred.width, tol);
  return {ab.hits + ba.hits, ab.total + ba.total};
}

}  // namespace detail

/// |pred ∩ truth| / |pred ∪ truth| for class c; nullopt on an empty union.
inline std::optional<double> iou(const Mask& pred, const Mask& truth, Label c) {
  const auto o = detail::overlap(pred, truth, c);
  const Index uni = o.pred + o.truth - o.inter;
  if (uni == 0) return std::nullopt;
  return double(o.inter) / double(uni);
}

inline std::optional<double> dsc(const Mask& pred, const Mask& truth, Label c) {
  const auto o = detail::overlap(pred, truth, c);
  if (o.pred + o.truth == 0) return std::nullopt;
  return 2.0 * double(o.inter) / double(o.pred + o.truth);
}

/// Pooled symmetric surface agreement: boundary points of either mask lying
/// within `tolerance` (Euclidean, px) of the other mask's boundary, over all
/// boundary points. nullopt when both masks lack class c; 0 when only one has it.
inline std::optional<double> nsd(const Mask& pred, const Mask& truth, Label c,
                                 double tolerance = 2.0) {
  const auto s = detail::nsd_counts(pred, truth, c, tolerance);
  if (s.total == 0) return std::nullopt;
  return double(s.hits) / double(s.total);
}

struct EvalOptions {
  Index classes = 3;
  double nsd_tolerance = 2.0;
  bool include_background = false;
};

struct ClassTally {
  Index inter = 0, pred = 0, truth = 0;
  Index surface_hits = 0, surface_total = 0;
  Index images_present = 0;  // images whose truth contains the class
};

struct EvalReport {
  EvalOptions options;
  std::vector<ClassTally> tallies;
  std::vector<std::optional<double>> iou_per_class, dsc_per_class, nsd_per_class;
  double miou = 0.0, dsc = 0.0, nsd = 0.0;
  std::vector<std::string> image_names;
  std::vector<std::vector<std::optional<double>>> per_image_iou;  // [image][class]

  Index classes() const { return Index(tallies.size()); }
};

/// Accumulates confusion and surface counts image by image; finish() turns the
/// pooled counts into per-class metrics and foreground means.
class Evaluator {
 public:
  explicit Evaluator(EvalOptions options) {
    report_.options = options;
    report_.tallies.assign(std::size_t(options.classes), {});
  }

  void add(const Mask& pred, const Mask& truth, const std::string& name = {}) {
    detail::check_aligned(pred, truth);
    std::vector<std::optional<double>> row;
    for (Index c = 0; c < report_.options.classes; ++c) {
      const auto o = detail::overlap(pred, truth, Label(c));
      const auto s = detail::nsd_counts(pred, truth, Label(c), report_.options.nsd_tolerance);
      auto& t = report_.tallies[std::size_t(c)];
      t.inter += o.inter;
      t.pred += o.pred;
      t.truth += o.truth;
      t.surface_hits += s.hits;
      t.surface_total += s.total;
      t.images_present += o.truth > 0;
      const Index uni = o.pred + o.truth - o.inter;
      row.push_back(uni == 0 ? std::nullopt : std::optional<double>(double(o.inter) / double(uni)));
    }
    report_.image_names.push_back(name);
    report_.per_image_iou.push_back(std::move(row));
  }

  EvalReport finish() const {
    EvalReport r = report_;
    const Index k = r.options.classes;
    r.iou_per_class.assign(std::size_t(k), std::nullopt);
    r.dsc_per_class.assign(std::size_t(k), std::nullopt);
    r.nsd_per_class.assign(std::size_t(k), std::nullopt);
    double si = 0, sd = 0, sn = 0;
    Index ni = 0, nd = 0, nn = 0;
    for (Index c = 0; c < k; ++c) {
      const auto& t = r.tallies[std::size_t(c)];
      const Index uni = t.pred + t.truth - t.inter;
      auto& iu = r.iou_per_class[std::size_t(c)];
      auto& di = r.dsc_per_class[std::size_t(c)];
      auto& ns = r.nsd_per_class[std::size_t(c)];
      if (uni > 0) iu = double(t.inter) / double(uni);
      if (t.pred + t.truth > 0) di = 2.0 * double(t.inter) / double(t.pred + t.truth);
      if (t.surface_total > 0) ns = double(t.surface_hits) / double(t.surface_total);
      if (c == 0 && !r.options.include_background) continue;
      if (iu) si += *iu, ++ni;
      if (di) sd += *di, ++nd;
      if (ns) sn += *ns, ++nn;
    }
    r.miou = ni ? si / double(ni) : 0.0;
    r.dsc = nd ? sd / double(nd) : 0.0;
    r.nsd = nn ? sn / double(nn) : 0.0;
    return r;
  }

 private:
  EvalReport report_;
};

using Predictor = std::function<Mask(const Image<float>&)>;

inline EvalReport evaluate(const Predictor& predict, const Dataset& data,
                           const EvalOptions& options) {
  if (data.empty()) throw DataError("evaluate: empty dataset");
  Evaluator ev(options);
  for (const auto& s : data) ev.add(predict(s.image), s.mask, s.name);
  return ev.finish();
}

/// CSV with columns class, iou, dsc, nsd; the last row ("mean") holds the
/// averages over evaluated classes. Absent values are left empty.
void write_report_csv(std::ostream& out, const EvalReport& report);
void write_report_text(std::ostream& out, const EvalReport& report);

}  // namespace loco
