#pragma once

// Epoch loop, per-epoch artefacts, checkpoints and resume.

#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "loco/config.hpp"
#include "loco/datasets.hpp"
#include "loco/metrics.hpp"

namespace loco {

inline constexpr const char* kArtifactVersion = "loco-1.0.0";

struct EpochRecord {
  long epoch = 0;
  // training losses, means over the epoch's steps (absent for epoch 0)
  std::optional<double> l_sup, l_u, l_lcc, total, lr;
  // pseudo-label filtering
  std::optional<double> t_global;
  std::vector<std::optional<double>> t_local, t_effective;
  std::vector<std::optional<double>> utilization, utilization_fixed;
  // validation
  double miou = 0.0, dsc = 0.0, nsd = 0.0;
  std::vector<std::optional<double>> iou;
  std::optional<double> interclass_similarity;
};

struct RunArtifacts {
  std::filesystem::path dir;
  std::vector<EpochRecord> history;
  long best_epoch = 0;
  double best_miou = 0.0;
  EvalReport final_report;  // best model on the validation set
  std::vector<std::filesystem::path> files;
};

struct RunOptions {
  bool resume = true;
  std::ostream* log = nullptr;
  std::string architecture;  // empty: reference net
};

/// Trains `config` on labeled + unlabeled, validating on `val` after every
/// epoch (and once before training). Writes into `dir`:
///   losses.csv, metrics.csv, diagnostics.csv, thresholds.csv (dynamic
///   filter only), utilization_fixed.csv (whenever L_u is on), report.csv,
///   report.txt, heatmaps/, epoch_<n>.ckpt (latest), best.ckpt, manifest.json.
/// An existing epoch checkpoint in `dir` is resumed when options.resume.
RunArtifacts run_training(const TrainConfig& config, const Dataset& labeled,
                          const Dataset& unlabeled, const Dataset& val,
                          const std::filesystem::path& dir, const RunOptions& options = {});

/// Rebuilds the evaluated network (the student) of a checkpoint and returns
/// its predictor together with the stored config.
struct LoadedModel {
  TrainConfig config;
  Predictor predict;
  std::shared_ptr<void> owner;
};
LoadedModel load_model(const std::filesystem::path& checkpoint);

nlohmann::json read_checkpoint_header(const std::filesystem::path& checkpoint);

/// Fixed-precision text for CSV cells; empty for absent values.
std::string csv_number(const std::optional<double>& v);

}  // namespace loco
