#pragma once

#include <array>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "viscog/scene.hpp"

namespace viscog {

/// Discrete image tokens: background = 0, mask = 1, then one token per
/// (class, color) pair.
struct TokenVocab {
  static constexpr int background = 0;
  static constexpr int mask = 1;
  static constexpr int n_classes = kNumClasses;
  static constexpr int n_colors = kNumColors;
  static constexpr int size = 2 + n_classes * n_colors;
  /// Tokens a generator may emit (everything except mask).
  static constexpr int n_emit = size - 1;

  static constexpr int object(int cls, int color) { return 2 + cls * n_colors + color; }
  static constexpr bool is_object(int tok) { return tok >= 2 && tok < size; }
  static constexpr int cls_of(int tok) { return (tok - 2) / n_colors; }
  static constexpr int color_of(int tok) { return (tok - 2) % n_colors; }

  // generator output index <-> token id (the mask token is never emitted)
  static constexpr int token_of_output(int k) { return k == 0 ? background : k + 1; }
  static constexpr int output_of_token(int tok) { return tok == background ? 0 : tok - 1; }
};

/// Row-major H x W token image.
struct TokenGrid {
  int width = 16;
  int height = 16;
  std::vector<int> cells;

  TokenGrid() = default;
  TokenGrid(int w, int h, int fill = TokenVocab::background)
      : width(w), height(h), cells(static_cast<std::size_t>(w * h), fill) {}

  int size() const { return width * height; }
  int& at(int x, int y) { return cells[static_cast<std::size_t>(y * width + x)]; }
  int at(int x, int y) const { return cells[static_cast<std::size_t>(y * width + x)]; }
  int count(int tok) const;
  bool is_final() const { return count(TokenVocab::mask) == 0; }

  friend bool operator==(const TokenGrid&, const TokenGrid&) = default;
};

struct Detection {
  int cls = 0;
  int color = 0;  // majority color of the component
  BBox bbox;
  int cell_count = 0;
  double purity = 1.0;  // share of cells carrying the majority (class, color) token
  std::array<int, kNumColors> color_hist{};

  friend bool operator==(const Detection&, const Detection&) = default;
};

/// Detections ordered by (class, bbox).
struct DetectorReport {
  std::vector<Detection> detections;

  int count_class(int cls) const;
  /// Largest detection of a class (ties: first in report order).
  const Detection* best_of(int cls) const;
};

struct NoiseConfig {
  double flip_prob = 0.0;
  std::uint64_t seed = 0;
};

inline constexpr int kDefaultDetectMinArea = 3;

TokenGrid render_scene(const Scene& scene);

/// Connected components (4-neighbourhood) of cells sharing an object class.
/// Colors inside a component may differ; the component is labelled by its
/// majority token. Components smaller than `min_area` are dropped.
DetectorReport detect(const TokenGrid& grid, int min_area = kDefaultDetectMinArea);

/// Replaces each cell, with probability flip_prob, by a different non-mask
/// token drawn uniformly.
TokenGrid apply_noise(const TokenGrid& grid, const NoiseConfig& cfg);

/// Normalised Hamming distance over `region` (all cells when empty optional).
double grid_distance(const TokenGrid& a, const TokenGrid& b,
                     const std::optional<std::vector<int>>& region = std::nullopt);

// text dump: "viscoglab-grid v1 <W> <H>" then one line of token ids per row
void write_grid(std::ostream& os, const TokenGrid& g);
TokenGrid read_grid(std::istream& is);
void save_grid(const std::string& path, const TokenGrid& g);
TokenGrid load_grid(const std::string& path);

}  // namespace viscog
