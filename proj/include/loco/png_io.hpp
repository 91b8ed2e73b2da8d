#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

namespace loco::png {

struct Raster {
  std::uint32_t width = 0;
  std::uint32_t height = 0;
  std::uint32_t channels = 0;  // 1 (gray) or 3 (RGB)
  std::vector<std::uint8_t> pixels;  // interleaved, row-major
};

/// Reads any 8-bit PNG, expanding palette images and stripping alpha.
/// Grayscale stays single-channel.
Raster read(const std::filesystem::path& file);

void write(const std::filesystem::path& file, const Raster& raster);

}  // namespace loco::png
