#pragma once

// Synthetic low-contrast segmentation data, folder ingestion and the
// labeled/unlabeled partition protocol.

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "loco/tensor.hpp"

namespace loco {

struct Sample {
  std::string name;
  Image<float> image;  // 3 x H x W, count 1
  Mask mask;
};

using Dataset = std::vector<Sample>;

/// Class 0 normal tissue, class 1 "benign" (minority), class 2 "malignant".
///
/// Tumour blobs are smoothed, non-overlapping random ellipses. Benign blobs
/// raise the green channel and malignant blobs the red channel by
/// contrast_delta times the channel's headroom to 1, blended with a tanh
/// profile of width boundary_softness around the exact mask edge (alpha = 0.5
/// on the edge). Background carries a low-frequency texture and white noise.
struct SynthConfig {
  Index image_size = 64;
  Index class_count = 3;
  double contrast_delta = 0.1;
  double minority_fraction = 0.05;   // expected benign pixel share
  double malignant_fraction = 0.10;  // expected malignant pixel share
  Index max_blobs = 3;               // 0..max_blobs blobs per tumour class
  double boundary_softness = 1.5;    // px
  double noise_sigma = 0.03;
  double texture_amplitude = 0.05;
  std::uint64_t seed = 0;
};

/// Background colour the generator starts from.
inline constexpr double kSynthBase[3] = {0.45, 0.30, 0.30};

Dataset generate(const SynthConfig& config, Index count, Index first_index = 0);

/// Per-pixel rule that knows the generator's colour model: a channel excess
/// of at least half the class shift means tumour. Exact on noise-free data.
Mask threshold_classify(const Image<float>& image, double contrast_delta);

// ---------------------------------------------------------------------------
// Disk layout: <root>/images/*.png (8-bit RGB), <root>/masks/*.png (8-bit
// grayscale class index, 255 = ignore) and <root>/manifest.json.

/// RGB colour -> class. Empty palette: grayscale value is the class index.
struct Palette {
  std::map<std::uint32_t, Label> colors;

  static std::uint32_t key(std::uint8_t r, std::uint8_t g, std::uint8_t b) {
    return (std::uint32_t(r) << 16) | (std::uint32_t(g) << 8) | std::uint32_t(b);
  }
  static Palette binary();  // black -> 0, white -> 1
  bool empty() const { return colors.empty(); }
};

struct LoadResult {
  Dataset samples;
  std::vector<std::string> warnings;  // orphan files
};

LoadResult load_folder(const std::filesystem::path& images_dir,
                       const std::filesystem::path& masks_dir, const Palette& palette = {});

void save_folder(const Dataset& data, const std::filesystem::path& root);

struct ManifestEntry {
  std::string name;
  std::string split;  // "train", "val", "labeled", "unlabeled"
};

void write_manifest(const std::filesystem::path& file, const std::vector<ManifestEntry>& entries,
                    const std::string& config_json);
std::vector<ManifestEntry> read_manifest(const std::filesystem::path& file);

// ---------------------------------------------------------------------------

enum class SplitOrder { chronological, random };

struct SplitSpec {
  double labeled_fraction = 0.1;
  std::uint64_t split_seed = 0;
  SplitOrder ordering = SplitOrder::random;
};

struct Split {
  std::vector<Index> labeled;
  std::vector<Index> unlabeled;
};

/// labeled = max(1, round(fraction * N)); indices returned in ascending order.
Split split(Index dataset_size, const SplitSpec& spec);

}  // namespace loco
