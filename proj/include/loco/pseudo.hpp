#pragma once

// Confidence-based dynamic filtering of teacher predictions.
//
// Thresholds are a global EMA of the batch's macro-averaged confidence scaled
// per class by (local / max local)^gamma, where the local term is the EMA of
// each class's mean confidence. Classes missing from a batch keep their
// previous local threshold.

#include <algorithm>
#include <cmath>
#include <optional>
#include <ostream>
#include <vector>

#include "loco/tensor.hpp"

namespace loco {

struct CdfConfig {
  double ema_lambda = 0.999;
  double gamma = 0.25;
  double t_init_global = 0.85;
  Index class_count = 3;
};

struct ThresholdState {
  double t_global = 0.85;
  std::vector<double> t_local;
  long step = 0;

  static ThresholdState initial(const CdfConfig& cfg) {
    ThresholdState s;
    s.t_global = cfg.t_init_global;
    s.t_local.assign(static_cast<std::size_t>(cfg.class_count), 1.0 / double(cfg.class_count));
    return s;
  }
};

struct ClassConfidence {
  std::vector<std::optional<double>> local;  // mean max-prob per argmax class
  std::optional<double> global;              // mean of present local values
};

template <typename Scalar>
ClassConfidence class_confidence(const ProbMap<Scalar>& probs) {
  const Index k = probs.channels();
  std::vector<double> sum(static_cast<std::size_t>(k), 0.0);
  std::vector<Index> cnt(static_cast<std::size_t>(k), 0);
  for (Index p = 0; p < probs.pixels(); ++p) {
    Index best = 0;
    Scalar best_v = probs.data(0, p);
    for (Index c = 1; c < k; ++c)
      if (probs.data(c, p) > best_v) {
        best_v = probs.data(c, p);
        best = c;
      }
    sum[std::size_t(best)] += double(best_v);
    ++cnt[std::size_t(best)];
  }
  ClassConfidence out;
  out.local.resize(std::size_t(k));
  double macro = 0.0;
  Index present = 0;
  for (Index c = 0; c < k; ++c) {
    if (cnt[std::size_t(c)] == 0) continue;
    const double a = sum[std::size_t(c)] / double(cnt[std::size_t(c)]);
    out.local[std::size_t(c)] = a;
    macro += a;
    ++present;
  }
  if (present > 0) out.global = macro / double(present);
  return out;
}

inline ThresholdState update_thresholds(const ThresholdState& state, const ClassConfidence& conf,
                                        const CdfConfig& cfg) {
  ThresholdState next = state;
  const double lam = cfg.ema_lambda;
  if (conf.global) next.t_global = lam * state.t_global + (1.0 - lam) * *conf.global;
  for (std::size_t c = 0; c < next.t_local.size() && c < conf.local.size(); ++c)
    if (conf.local[c]) next.t_local[c] = lam * state.t_local[c] + (1.0 - lam) * *conf.local[c];
  ++next.step;
  return next;
}

/// T(c) = T_g * (T_l(c) / max T_l)^gamma.
inline std::vector<double> effective_threshold(const ThresholdState& state, const CdfConfig& cfg) {
  if (state.t_local.empty()) throw DegenerateState("effective_threshold: no classes");
  const double mx = *std::max_element(state.t_local.begin(), state.t_local.end());
  if (!(mx > 0.0)) throw DegenerateState("effective_threshold: all local thresholds are zero");
  std::vector<double> t(state.t_local.size());
  for (std::size_t c = 0; c < t.size(); ++c)
    t[c] = cfg.gamma == 0.0 ? state.t_global
                            : state.t_global * std::pow(state.t_local[c] / mx, cfg.gamma);
  return t;
}

inline std::vector<double> fixed_thresholds(Index classes, double value) {
  return std::vector<double>(static_cast<std::size_t>(classes), value);
}

/// Hard pseudo-labels: argmax class if its probability reaches that class's
/// threshold, kIgnore otherwise.
template <typename Scalar>
PseudoLabelMap filter_pseudo_labels(const ProbMap<Scalar>& probs,
                                    const std::vector<double>& thresholds) {
  if (Index(thresholds.size()) != probs.channels())
    throw ShapeError("filter_pseudo_labels: expected one threshold per class");
  PseudoLabelMap out(probs.count, probs.height, probs.width);
  for (Index p = 0; p < probs.pixels(); ++p) {
    Index best = 0;
    Scalar best_v = probs.data(0, p);
    for (Index c = 1; c < probs.channels(); ++c)
      if (probs.data(c, p) > best_v) {
        best_v = probs.data(c, p);
        best = c;
      }
    out.values(p) = double(best_v) >= thresholds[std::size_t(best)] ? static_cast<Label>(best)
                                                                    : kIgnore;
  }
  return out;
}

/// Per class: kept pixels / pixels whose reference argmax is that class.
inline std::vector<std::optional<double>> utilization(const PseudoLabelMap& pseudo,
                                                      const LabelMap& reference_argmax,
                                                      Index classes) {
  if (pseudo.values.size() != reference_argmax.values.size())
    throw ShapeError("utilization: pseudo-label and reference shapes differ");
  std::vector<Index> total(std::size_t(classes), 0), kept(std::size_t(classes), 0);
  for (Index p = 0; p < pseudo.values.size(); ++p) {
    const Label r = reference_argmax.values(p);
    if (r == kIgnore || r >= classes) continue;
    ++total[r];
    if (pseudo.values(p) != kIgnore) ++kept[r];
  }
  std::vector<std::optional<double>> u(static_cast<std::size_t>(classes));
  for (std::size_t c = 0; c < u.size(); ++c)
    if (total[c] > 0) u[c] = double(kept[c]) / double(total[c]);
  return u;
}

/// Running per-class kept/total counts over an epoch.
struct UtilizationCounter {
  std::vector<Index> kept, total;

  explicit UtilizationCounter(Index classes = 0)
      : kept(std::size_t(classes), 0), total(std::size_t(classes), 0) {}

  void add(const PseudoLabelMap& pseudo, const LabelMap& reference_argmax) {
    for (Index p = 0; p < pseudo.values.size(); ++p) {
      const Label r = reference_argmax.values(p);
      if (r == kIgnore || std::size_t(r) >= total.size()) continue;
      ++total[r];
      if (pseudo.values(p) != kIgnore) ++kept[r];
    }
  }
  std::vector<std::optional<double>> rates() const {
    std::vector<std::optional<double>> u(total.size());
    for (std::size_t c = 0; c < u.size(); ++c)
      if (total[c] > 0) u[c] = double(kept[c]) / double(total[c]);
    return u;
  }
};

}  // namespace loco
