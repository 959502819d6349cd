#include "viscog/image.hpp"

#include <algorithm>
#include <cstdio>
#include <memory>

#include <png.h>

#include "viscog/error.hpp"

namespace viscog {

namespace {

constexpr std::array<Rgb, kNumColors> kBase = {{
    {220, 40, 40},    // red
    {240, 140, 30},   // orange
    {235, 215, 40},   // yellow
    {50, 170, 60},    // green
    {40, 90, 220},    // blue
    {140, 60, 180},   // purple
    {250, 250, 250},  // white
    {20, 20, 20},     // black
}};

struct FileCloser {
  void operator()(std::FILE* f) const { std::fclose(f); }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

}  // namespace

Rgb token_rgb(int token) {
  if (token == TokenVocab::background) return {200, 200, 200};
  if (token == TokenVocab::mask) return {255, 0, 255};
  const auto base = kBase[static_cast<std::size_t>(TokenVocab::color_of(token))];
  // class is encoded as a small signed shift of every channel
  const int shift = -3 * TokenVocab::cls_of(token);
  Rgb out;
  for (int k = 0; k < 3; ++k) out[static_cast<std::size_t>(k)] =
      static_cast<std::uint8_t>(std::clamp(base[static_cast<std::size_t>(k)] + shift, 0, 255));
  return out;
}

RgbImage rasterize(const TokenGrid& grid, int scale) {
  RgbImage img{grid.width * scale, grid.height * scale, {}};
  img.pixels.resize(static_cast<std::size_t>(3 * img.width * img.height));
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x) {
      const Rgb c = token_rgb(grid.at(x / scale, y / scale));
      const auto i = static_cast<std::size_t>(3 * (y * img.width + x));
      img.pixels[i] = c[0];
      img.pixels[i + 1] = c[1];
      img.pixels[i + 2] = c[2];
    }
  return img;
}

void write_png(const std::string& path, const RgbImage& img) {
  FilePtr fp(std::fopen(path.c_str(), "wb"));
  if (!fp) throw IoError("cannot open '" + path + "' for writing");
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_write_struct(&png, &info);
    throw IoError("libpng initialisation failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw IoError("PNG encoding failed for '" + path + "'");
  }
  png_init_io(png, fp.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(img.width), static_cast<png_uint_32>(img.height),
               8, PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (int y = 0; y < img.height; ++y)
    png_write_row(png, img.pixels.data() + static_cast<std::size_t>(3 * y * img.width));
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

RgbImage read_png(const std::string& path) {
  FilePtr fp(std::fopen(path.c_str(), "rb"));
  if (!fp) throw IoError("cannot open '" + path + "'");
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IoError("libpng initialisation failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IoError("PNG decoding failed for '" + path + "'");
  }
  png_init_io(png, fp.get());
  png_read_info(png, info);
  if (png_get_color_type(png, info) != PNG_COLOR_TYPE_RGB || png_get_bit_depth(png, info) != 8) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw DataError("'" + path + "' is not an 8-bit RGB PNG");
  }
  RgbImage img{static_cast<int>(png_get_image_width(png, info)),
               static_cast<int>(png_get_image_height(png, info)), {}};
  img.pixels.resize(static_cast<std::size_t>(3 * img.width * img.height));
  for (int y = 0; y < img.height; ++y)
    png_read_row(png, img.pixels.data() + static_cast<std::size_t>(3 * y * img.width), nullptr);
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return img;
}

void export_image(const TokenGrid& grid, const std::string& path, int scale) {
  write_png(path, rasterize(grid, scale));
  save_grid(path + ".grid", grid);
}

}  // namespace viscog
