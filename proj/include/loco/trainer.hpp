#pragma once

// Mean-teacher training step with dynamic pseudo-label filtering and the
// low-contrast contrastive term.

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "loco/augment.hpp"
#include "loco/config.hpp"
#include "loco/lcc.hpp"
#include "loco/losses.hpp"
#include "loco/metrics.hpp"
#include "loco/nn/model.hpp"
#include "loco/nn/sgd.hpp"
#include "loco/pseudo.hpp"
#include "loco/rng.hpp"

namespace loco {

/// Student inputs of one step after augmentation.
template <typename Scalar>
struct StepInputs {
  Tensor<Scalar> labeled;    // weak labeled views
  Mask masks;
  Tensor<Scalar> unlabeled;  // strong unlabeled views; count 0 when unused
  PseudoLabelMap pseudo;     // CutMix-mixed pseudo-labels of `unlabeled`
};

struct LossParts {
  double l_sup = 0.0;
  double l_u = 0.0;
  double l_lcc = 0.0;
  double total = 0.0;
  Index lcc_entries = 0;
  Index lcc_active_classes = 0;
};

/// Student forward, all loss components and (if `backward`) gradient
/// accumulation into the student and projector parameters.
template <typename Scalar>
LossParts loss_and_grad(nn::SegModel<Scalar>& student, Projector<Scalar>& projector,
                        const StepInputs<Scalar>& in, const TrainConfig& cfg, bool backward = true) {
  const Index nl = in.labeled.count;
  const Index nu = cfg.use_unsup ? in.unlabeled.count : 0;
  const Index k = cfg.class_count;
  const Tensor<Scalar> x = nu > 0 ? concat_batch(std::vector<const Tensor<Scalar>*>{&in.labeled, &in.unlabeled}) : in.labeled;
  auto out = student.forward(x, nn::Mode::train);
  if (out.probs.channels() != k) throw ShapeError("model class count differs from config");

  LossParts parts;
  Tensor<Scalar> grad = Tensor<Scalar>::zeros(k, x.count, x.height, x.width);
  const Index lab_cols = nl * x.plane();
  {
    const auto sup = supervised_loss_grad(slice_batch(out.probs, 0, nl), in.masks);
    parts.l_sup = double(sup.value);
    grad.data.leftCols(lab_cols) = sup.grad_logits.data;
  }
  if (nu > 0) {
    const auto u = unsupervised_loss_grad(slice_batch(out.probs, nl, nu), in.pseudo);
    parts.l_u = double(u.value);
    grad.data.rightCols(x.pixels() - lab_cols) = Scalar(cfg.lambda1) * u.grad_logits.data;
  }

  std::optional<FeatureMap<Scalar>> grad_features;
  if (cfg.use_lcc()) {
    const auto lcc = cfg.lcc();
    const LabelMap labels = nu > 0 ? concat_labels({&in.masks, &in.pseudo}) : in.masks;
    const auto emb = projector.forward(out.features, x.height, x.width);
    const auto ce = class_embeddings(slice_batch(emb, 0, nl), in.masks, k);
    LowContrastSet set;
    if (cfg.use_ice)
      set = select_ice(class_similarity(emb, labels, ce), labels, k, lcc, nl);
    if (cfg.use_bce) {
      const auto boundary = boundary_mask(labels, lcc);
      set = merge(set, select_bce(boundary_similarity(emb, boundary, lcc), labels, lcc, nl));
    }
    LowContrastSet kept;
    for (const auto& e : set.entries)
      if ((e.origin == Origin::labeled && cfg.lcc_labeled) ||
          (e.origin == Origin::unlabeled && cfg.lcc_unlabeled))
        kept.entries.push_back(e);
    kept = restrict_to_present(kept, ce);
    const auto loss = lcc_loss(kept, emb, ce, lcc);
    parts.l_lcc = double(loss.value);
    parts.lcc_entries = Index(kept.size());
    parts.lcc_active_classes = loss.active_classes;
    if (backward) {
      Planes<Scalar> g_emb = Planes<Scalar>::Zero(emb.channels(), emb.pixels());
      for (std::size_t i = 0; i < kept.size(); ++i)
        g_emb.col(kept.entries[i].pixel) += loss.grad_entries.col(Index(i));
      if (cfg.class_embedding_grad) class_embeddings_backward(ce, in.masks, loss.grad_class_rows, g_emb);
      g_emb *= Scalar(cfg.lambda2);
      grad_features = projector.backward(g_emb);
    }
  }
  parts.total = total_loss(parts.l_sup, parts.l_u, parts.l_lcc, cfg.weights());
  if (backward) student.backward(grad, grad_features ? &*grad_features : nullptr);
  return parts;
}

struct StepReport {
  long step = 0;
  LossParts losses;
  double lr = 0.0;
  double teacher_alpha = 0.0;
  std::vector<double> thresholds;  // per class, as applied this step
  ThresholdState state;            // after this step's update
  UtilizationCounter utilization;        // active filter
  UtilizationCounter utilization_fixed;  // fixed-threshold filter, same predictions
};

/// Pixels produced by padding in a weak view (no source content).
inline Mask padding_mask(const Geometry& g) {
  return replay(g, Mask(1, g.source_h, g.source_w, 0));
}

template <typename Scalar>
class Trainer {
 public:
  Trainer(TrainConfig cfg, std::unique_ptr<nn::SegModel<Scalar>> student, long total_steps)
      : cfg_(std::move(cfg)), student_(std::move(student)), teacher_(student_->clone()),
        projector_(student_->feature_dim(), cfg_.embedding_dim, derive_seed(cfg_.seed, {0x9e0})),
        sgd_(cfg_.momentum, cfg_.weight_decay), state_(ThresholdState::initial(cfg_.cdf())),
        total_steps_(total_steps) {
    if (student_->classes() != cfg_.class_count)
      throw ShapeError("model class count differs from config");
  }

  const TrainConfig& config() const { return cfg_; }
  nn::SegModel<Scalar>& student() { return *student_; }
  nn::SegModel<Scalar>& teacher() { return *teacher_; }
  Projector<Scalar>& projector() { return projector_; }
  nn::Sgd<Scalar>& optimizer() { return sgd_; }
  ThresholdState& thresholds() { return state_; }
  long& global_step() { return step_; }
  long total_steps() const { return total_steps_; }

  /// Parameters the optimizer updates: the student, plus the projector when
  /// the contrastive term is on.
  std::vector<nn::Param<Scalar>*> trainable() {
    auto ps = student_->parameters();
    if (cfg_.use_lcc())
      for (auto* p : projector_.parameters()) ps.push_back(p);
    return ps;
  }

  StepReport step(const Batch<Scalar>& batch) {
    try {
      return step_impl(batch);
    } catch (const NumericFault& e) {
      throw NumericFault(e.where(), "step " + std::to_string(step_) + ": " + e.what());
    } catch (const ShapeError& e) {
      throw ShapeError("step " + std::to_string(step_) + ": " + e.what());
    } catch (const DomainError& e) {
      throw DomainError("step " + std::to_string(step_) + ": " + e.what());
    } catch (const DegenerateState& e) {
      throw DegenerateState("step " + std::to_string(step_) + ": " + e.what());
    }
  }

  /// Weak/strong views, teacher pseudo-labels and utilization of one batch,
  /// without touching any parameters. Updates the threshold state when the
  /// dynamic filter is on.
  StepInputs<Scalar> prepare(const Batch<Scalar>& batch, StepReport& report) {
    validate(batch, cfg_.class_count);
    const auto weak = cfg_.weak();
    const auto strong = cfg_.strong();
    const Index k = cfg_.class_count;
    StepInputs<Scalar> in;

    std::vector<Tensor<Scalar>> images;
    std::vector<Mask> masks;
    for (std::size_t i = 0; i < batch.labeled.size(); ++i) {
      const auto& pair = batch.labeled[i];
      auto v = weak_perturb(pair.image, std::optional<Mask>(pair.mask),
                            derive_seed(cfg_.seed, {std::uint64_t(step_), 1, i}), weak);
      images.push_back(std::move(v.image));
      masks.push_back(std::move(*v.mask));
    }
    in.labeled = concat_batch(images);
    std::vector<const Mask*> mask_ptrs;
    for (const auto& m : masks) mask_ptrs.push_back(&m);
    in.masks = concat_labels(mask_ptrs);

    report.utilization = UtilizationCounter(k);
    report.utilization_fixed = UtilizationCounter(k);
    report.thresholds.clear();
    const Index nu = Index(batch.unlabeled.size());
    if (!cfg_.use_unsup || nu == 0) {
      report.state = state_;
      return in;
    }

    std::vector<WeakView<Scalar>> views;
    std::vector<Mask> pads;
    for (Index j = 0; j < nu; ++j) {
      views.push_back(weak_perturb(batch.unlabeled[std::size_t(j)], std::optional<Mask>{},
                                   derive_seed(cfg_.seed, {std::uint64_t(step_), 2, std::uint64_t(j)}),
                                   weak));
      pads.push_back(padding_mask(views.back().geometry));
    }
    std::vector<Tensor<Scalar>> weak_images;
    for (const auto& v : views) weak_images.push_back(v.image);
    const auto teacher_out = teacher_->forward(concat_batch(weak_images), nn::Mode::eval);
    const auto& probs = teacher_out.probs;
    std::vector<const Mask*> pad_ptrs;
    for (const auto& p : pads) pad_ptrs.push_back(&p);
    const Mask pad = concat_labels(pad_ptrs);

    if (cfg_.use_cdf) {
      ProbMap<Scalar> content;
      Index n = 0;
      for (Index p = 0; p < pad.pixels(); ++p) n += pad.values(p) != kIgnore;
      content = Tensor<Scalar>(k, 1, 1, n);
      for (Index p = 0, q = 0; p < pad.pixels(); ++p)
        if (pad.values(p) != kIgnore) content.data.col(q++) = probs.data.col(p);
      state_ = update_thresholds(state_, class_confidence(content), cfg_.cdf());
      report.thresholds = effective_threshold(state_, cfg_.cdf());
    } else {
      report.thresholds = fixed_thresholds(k, cfg_.fixed_threshold);
    }
    report.state = state_;

    auto reference = argmax(probs);
    auto pseudo = filter_pseudo_labels(probs, report.thresholds);
    auto pseudo_fixed = filter_pseudo_labels(probs, fixed_thresholds(k, cfg_.fixed_threshold));
    for (Index p = 0; p < pad.pixels(); ++p)
      if (pad.values(p) == kIgnore) {
        reference.values(p) = kIgnore;
        pseudo.values(p) = kIgnore;
        pseudo_fixed.values(p) = kIgnore;
      }
    report.utilization.add(pseudo, reference);
    report.utilization_fixed.add(pseudo_fixed, reference);

    // Jitter every view first so CutMix pastes the partner's strong image.
    std::vector<std::uint64_t> seeds;
    std::vector<WeakView<Scalar>> jittered(static_cast<std::size_t>(nu));
    std::vector<PseudoLabelMap> own(static_cast<std::size_t>(nu));
    for (Index j = 0; j < nu; ++j) {
      seeds.push_back(derive_seed(cfg_.seed, {std::uint64_t(step_), 3, std::uint64_t(j)}));
      jittered[std::size_t(j)].image =
          intensity_perturb(views[std::size_t(j)].image, derive_seed(seeds.back(), {1}), strong);
      own[std::size_t(j)] = slice_labels(pseudo, j, 1);
    }
    std::vector<Tensor<Scalar>> strong_images;
    std::vector<PseudoLabelMap> mixed;
    for (Index j = 0; j < nu; ++j) {
      const Index partner = (j + 1) % nu;
      const bool has_partner = nu > 1;
      auto res = strong_perturb(views[std::size_t(j)], std::optional<PseudoLabelMap>(own[std::size_t(j)]),
                                has_partner ? &jittered[std::size_t(partner)] : nullptr,
                                has_partner ? &own[std::size_t(partner)] : nullptr,
                                has_partner ? std::optional<Index>(partner) : std::nullopt,
                                seeds[std::size_t(j)], strong);
      strong_images.push_back(std::move(res.view.image));
      mixed.push_back(std::move(*res.pseudo));
    }
    in.unlabeled = concat_batch(strong_images);
    std::vector<const PseudoLabelMap*> mixed_ptrs;
    for (const auto& m : mixed) mixed_ptrs.push_back(&m);
    in.pseudo = concat_labels(mixed_ptrs);
    return in;
  }

  double current_alpha() const {
    if (!cfg_.ema_warmup) return cfg_.teacher_alpha;
    return std::min(1.0 - 1.0 / double(step_ + 1), cfg_.teacher_alpha);
  }

 private:
  StepReport step_impl(const Batch<Scalar>& batch) {
    StepReport report;
    report.step = step_;
    const auto in = prepare(batch, report);

    student_->zero_grad();
    for (auto* p : projector_.parameters()) p->zero_grad();
    report.losses = loss_and_grad(*student_, projector_, in, cfg_, true);

    report.lr = nn::poly_lr(cfg_.learning_rate, step_, total_steps_, cfg_.lr_power);
    const auto params = trainable();
    sgd_.step(params, report.lr);
    for (const auto* p : params)
      if (!p->value.allFinite()) throw NumericFault(p->name, "non-finite parameter after update");

    report.teacher_alpha = current_alpha();
    nn::ema_update(*teacher_, *student_, report.teacher_alpha);
    ++step_;
    return report;
  }

  TrainConfig cfg_;
  std::unique_ptr<nn::SegModel<Scalar>> student_;
  std::unique_ptr<nn::SegModel<Scalar>> teacher_;
  Projector<Scalar> projector_;
  nn::Sgd<Scalar> sgd_;
  ThresholdState state_;
  long step_ = 0;
  long total_steps_ = 0;
};

/// Eval-mode argmax predictions of `model`, one image at a time.
template <typename Scalar>
Predictor predictor(nn::SegModel<Scalar>& model) {
  return [&model](const Image<float>& image) {
    const auto out = model.forward(image.template cast<Scalar>(), nn::Mode::eval);
    return argmax(out.probs);
  };
}

template <typename Scalar>
EvalReport evaluate(nn::SegModel<Scalar>& model, const Dataset& data, const EvalOptions& options) {
  return evaluate(predictor(model), data, options);
}

}  // namespace loco
