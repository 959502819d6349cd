#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "viscog/grid.hpp"

namespace viscog {

using Rgb = std::array<std::uint8_t, 3>;

struct RgbImage {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> pixels;  // row-major RGB

  Rgb at(int x, int y) const {
    const auto i = static_cast<std::size_t>(3 * (y * width + x));
    return {pixels[i], pixels[i + 1], pixels[i + 2]};
  }
};

inline constexpr int kPixelsPerCell = 16;

/// Fixed colour of a token; distinct tokens get distinct triples.
Rgb token_rgb(int token);

RgbImage rasterize(const TokenGrid& grid, int scale = kPixelsPerCell);

void write_png(const std::string& path, const RgbImage& img);
RgbImage read_png(const std::string& path);

/// Writes `path` as PNG and `path + ".grid"` as the text dump.
void export_image(const TokenGrid& grid, const std::string& path, int scale = kPixelsPerCell);

}  // namespace viscog
