#include "loco/png_io.hpp"

#include <png.h>

#include <cstdio>
#include <memory>
#include <stdexcept>

#include "loco/errors.hpp"

namespace loco::png {
namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

[[noreturn]] void on_error(png_structp, png_const_charp msg) { throw DataError(msg); }
void on_warning(png_structp, png_const_charp) {}

}  // namespace

Raster read(const std::filesystem::path& file) {
  FilePtr fp(std::fopen(file.c_str(), "rb"));
  if (!fp) throw DataError("cannot open " + file.string());
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, on_error, on_warning);
  png_infop info = png_create_info_struct(png);
  Raster r;
  try {
    png_init_io(png, fp.get());
    png_read_info(png, info);
    const auto color = png_get_color_type(png, info);
    const auto depth = png_get_bit_depth(png, info);
    if (depth == 16) png_set_strip_16(png);
    if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
    if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
    if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_strip_alpha(png);
    png_read_update_info(png, info);
    r.width = png_get_image_width(png, info);
    r.height = png_get_image_height(png, info);
    r.channels = png_get_channels(png, info);
    const auto stride = png_get_rowbytes(png, info);
    r.pixels.resize(stride * r.height);
    std::vector<png_bytep> rows(r.height);
    for (std::uint32_t y = 0; y < r.height; ++y) rows[y] = r.pixels.data() + y * stride;
    png_read_image(png, rows.data());
    png_read_end(png, nullptr);
  } catch (const DataError& e) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw DataError(file.string() + ": " + e.what());
  }
  png_destroy_read_struct(&png, &info, nullptr);
  if (r.channels != 1 && r.channels != 3)
    throw DataError(file.string() + ": unsupported channel count");
  return r;
}

void write(const std::filesystem::path& file, const Raster& raster) {
  if (raster.channels != 1 && raster.channels != 3)
    throw DataError("png write: channels must be 1 or 3");
  FilePtr fp(std::fopen(file.c_str(), "wb"));
  if (!fp) throw DataError("cannot create " + file.string());
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, on_error, on_warning);
  png_infop info = png_create_info_struct(png);
  try {
    png_init_io(png, fp.get());
    png_set_IHDR(png, info, raster.width, raster.height, 8,
                 raster.channels == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY,
                 PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    const std::size_t stride = std::size_t(raster.width) * raster.channels;
    for (std::uint32_t y = 0; y < raster.height; ++y)
      png_write_row(png, const_cast<png_bytep>(raster.pixels.data() + y * stride));
    png_write_end(png, nullptr);
  } catch (const DataError& e) {
    png_destroy_write_struct(&png, &info);
    throw DataError(file.string() + ": " + e.what());
  }
  png_destroy_write_struct(&png, &info);
}

}  // namespace loco::png
