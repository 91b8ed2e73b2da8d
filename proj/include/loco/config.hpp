#pragma once

// Training configuration, its flat JSON form and the ablation presets.

#include <cstdint>
#include <string>

#include <json.hpp>

#include "loco/augment.hpp"
#include "loco/lcc.hpp"
#include "loco/losses.hpp"
#include "loco/metrics.hpp"
#include "loco/pseudo.hpp"

namespace loco {

struct TrainConfig {
  std::string name = "run";
  std::string variant = "m7";
  long epochs = 100;
  Index labeled_batch = 8;
  Index unlabeled_batch = 8;
  Index class_count = 3;
  std::uint64_t seed = 0;

  // optimisation
  double learning_rate = 1e-3;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  double lr_power = 0.9;
  double teacher_alpha = 0.999;
  bool ema_warmup = false;  // alpha_t = min(1 - 1/(t+1), teacher_alpha)

  // ablation switches
  bool use_unsup = true;
  bool use_cdf = true;
  bool use_ice = true;
  bool use_bce = true;
  bool lcc_labeled = true;    // anchors from labeled images
  bool lcc_unlabeled = true;  // anchors from unlabeled images (pseudo-labels)

  // losses
  double lambda1 = 0.5;
  double lambda2 = 0.1;

  // pseudo-label filtering
  double fixed_threshold = 0.95;
  double cdf_lambda = 0.999;
  double gamma = 0.25;
  double t_init_global = 0.85;

  // contrastive selection
  double k_percent = 30.0;
  Index neighborhood_h = 64;
  double temperature = 0.1;
  Index embedding_dim = 64;
  bool class_embedding_grad = true;

  // augmentation
  Index crop_size = 64;
  double scale_min = 0.5;
  double scale_max = 2.0;
  double flip_prob = 0.5;
  double jitter_prob = 0.8;
  double brightness = 0.5;
  double contrast = 0.5;
  double saturation = 0.5;
  double hue = 0.25;
  double grayscale_prob = 0.2;
  double blur_prob = 0.5;
  double cutmix_prob = 0.5;
  double cutmix_area_min = 0.25;
  double cutmix_area_max = 0.5;

  // evaluation and outputs
  double nsd_tolerance = 2.0;
  bool include_background = false;
  Index heatmap_images = 2;
  bool save_checkpoints = true;
  bool export_embeddings = false;

  CdfConfig cdf() const { return {cdf_lambda, gamma, t_init_global, class_count}; }
  LccConfig lcc() const {
    return {k_percent, neighborhood_h, temperature, embedding_dim, class_embedding_grad};
  }
  LossWeights weights() const { return {lambda1, lambda2}; }
  WeakConfig weak() const { return {crop_size, crop_size, scale_min, scale_max, flip_prob}; }
  StrongConfig strong() const {
    StrongConfig s;
    s.jitter_prob = jitter_prob;
    s.brightness = brightness;
    s.contrast = contrast;
    s.saturation = saturation;
    s.hue = hue;
    s.grayscale_prob = grayscale_prob;
    s.blur_prob = blur_prob;
    s.cutmix_prob = cutmix_prob;
    s.cutmix_area_min = cutmix_area_min;
    s.cutmix_area_max = cutmix_area_max;
    return s;
  }
  EvalOptions eval() const { return {class_count, nsd_tolerance, include_background}; }
  bool use_lcc() const { return use_ice || use_bce; }
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(
    TrainConfig, name, variant, epochs, labeled_batch, unlabeled_batch, class_count, seed,
    learning_rate, momentum, weight_decay, lr_power, teacher_alpha, ema_warmup, use_unsup, use_cdf,
    use_ice, use_bce, lcc_labeled, lcc_unlabeled, lambda1, lambda2, fixed_threshold, cdf_lambda,
    gamma, t_init_global, k_percent, neighborhood_h, temperature, embedding_dim,
    class_embedding_grad, crop_size, scale_min, scale_max, flip_prob, jitter_prob, brightness,
    contrast, saturation, hue, grayscale_prob, blur_prob, cutmix_prob, cutmix_area_min,
    cutmix_area_max, nsd_tolerance, include_background, heatmap_images, save_checkpoints,
    export_embeddings)

/// Sets the ablation switches of variant m1..m7:
///   m1 labeled only, m2 +L_u (fixed threshold), m3 +CDF, m4 +BCE, m5 +ICE,
///   m6 +BCE+ICE, m7 +CDF+BCE+ICE.
/// Throws std::invalid_argument on anything else.
inline void apply_variant(TrainConfig& c, const std::string& variant) {
  struct Flags {
    const char* id;
    bool unsup, cdf, bce, ice;
  };
  static constexpr Flags table[] = {
      {"m1", false, false, false, false}, {"m2", true, false, false, false},
      {"m3", true, true, false, false},   {"m4", true, false, true, false},
      {"m5", true, false, false, true},   {"m6", true, false, true, true},
      {"m7", true, true, true, true},
  };
  for (const auto& f : table)
    if (variant == f.id) {
      c.variant = variant;
      c.use_unsup = f.unsup;
      c.use_cdf = f.cdf;
      c.use_bce = f.bce;
      c.use_ice = f.ice;
      return;
    }
  throw std::invalid_argument("unknown variant '" + variant + "' (expected m1..m7)");
}

/// Overlays `patch` onto `base`, rejecting keys TrainConfig does not have and
/// values of the wrong JSON type.
inline TrainConfig merge_config(const TrainConfig& base, const nlohmann::json& patch) {
  if (!patch.is_object()) throw std::invalid_argument("config must be a JSON object");
  nlohmann::json j = base;
  for (const auto& [key, value] : patch.items()) {
    if (!j.contains(key)) throw std::invalid_argument("unknown config key '" + key + "'");
    const auto& ref = j[key];
    const bool ok = (ref.is_boolean() && value.is_boolean()) ||
                    (ref.is_string() && value.is_string()) ||
                    (ref.is_number_integer() && value.is_number_integer()) ||
                    (ref.is_number_float() && value.is_number());
    if (!ok) throw std::invalid_argument("config key '" + key + "' has the wrong type");
    j[key] = value;
  }
  return j.get<TrainConfig>();
}

}  // namespace loco
