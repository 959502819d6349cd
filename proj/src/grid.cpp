#include "viscog/grid.hpp"

#include <algorithm>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <tuple>

#include "viscog/error.hpp"
#include "viscog/rng.hpp"

namespace viscog {

int TokenGrid::count(int tok) const {
  return static_cast<int>(std::count(cells.begin(), cells.end(), tok));
}

int DetectorReport::count_class(int cls) const {
  return static_cast<int>(std::count_if(detections.begin(), detections.end(),
                                        [cls](const Detection& d) { return d.cls == cls; }));
}

const Detection* DetectorReport::best_of(int cls) const {
  const Detection* best = nullptr;
  for (const auto& d : detections)
    if (d.cls == cls && (!best || d.cell_count > best->cell_count)) best = &d;
  return best;
}

TokenGrid render_scene(const Scene& scene) {
  TokenGrid g(scene.width, scene.height);
  for (const auto& o : scene.objects)
    for (int y = o.bbox.y0; y <= o.bbox.y1; ++y)
      for (int x = o.bbox.x0; x <= o.bbox.x1; ++x) g.at(x, y) = TokenVocab::object(o.cls, o.color);
  return g;
}

DetectorReport detect(const TokenGrid& grid, int min_area) {
  if (!grid.is_final()) throw ContractError("detect: grid still contains mask tokens");
  const int w = grid.width, h = grid.height;
  std::vector<int> label(grid.cells.size(), -1);
  std::vector<int> stack;
  DetectorReport rep;

  for (int start = 0; start < w * h; ++start) {
    const int tok = grid.cells[static_cast<std::size_t>(start)];
    if (!TokenVocab::is_object(tok) || label[static_cast<std::size_t>(start)] >= 0) continue;
    const int cls = TokenVocab::cls_of(tok);

    Detection d;
    d.cls = cls;
    d.bbox = {w, h, -1, -1};
    stack.assign(1, start);
    label[static_cast<std::size_t>(start)] = start;
    while (!stack.empty()) {
      const int c = stack.back();
      stack.pop_back();
      const int x = c % w, y = c / w;
      d.cell_count++;
      d.color_hist[static_cast<std::size_t>(TokenVocab::color_of(grid.cells[static_cast<std::size_t>(c)]))]++;
      d.bbox.x0 = std::min(d.bbox.x0, x);
      d.bbox.y0 = std::min(d.bbox.y0, y);
      d.bbox.x1 = std::max(d.bbox.x1, x);
      d.bbox.y1 = std::max(d.bbox.y1, y);
      const int nx[4] = {x - 1, x + 1, x, x};
      const int ny[4] = {y, y, y - 1, y + 1};
      for (int k = 0; k < 4; ++k) {
        if (nx[k] < 0 || nx[k] >= w || ny[k] < 0 || ny[k] >= h) continue;
        const int n = ny[k] * w + nx[k];
        const int t = grid.cells[static_cast<std::size_t>(n)];
        if (label[static_cast<std::size_t>(n)] >= 0 || !TokenVocab::is_object(t) ||
            TokenVocab::cls_of(t) != cls)
          continue;
        label[static_cast<std::size_t>(n)] = start;
        stack.push_back(n);
      }
    }
    if (d.cell_count < min_area) continue;
    const auto maj = std::max_element(d.color_hist.begin(), d.color_hist.end());
    d.color = static_cast<int>(maj - d.color_hist.begin());
    d.purity = static_cast<double>(*maj) / d.cell_count;
    rep.detections.push_back(d);
  }

  std::sort(rep.detections.begin(), rep.detections.end(), [](const Detection& a, const Detection& b) {
    return std::tie(a.cls, a.bbox) < std::tie(b.cls, b.bbox);
  });
  return rep;
}

TokenGrid apply_noise(const TokenGrid& grid, const NoiseConfig& cfg) {
  if (!(cfg.flip_prob >= 0.0 && cfg.flip_prob < 0.5))
    throw ConfigError("noise.flip_prob must lie in [0, 0.5)");
  if (!grid.is_final()) throw ContractError("apply_noise: grid still contains mask tokens");
  TokenGrid out = grid;
  if (cfg.flip_prob == 0.0) return out;
  Rng rng(derive_seed(cfg.seed, {0x4E015EULL}));
  for (auto& c : out.cells) {
    if (!rng.bernoulli(cfg.flip_prob)) continue;
    // uniform over the n_emit - 1 non-mask tokens different from c
    const int out_idx = static_cast<int>(rng.below(TokenVocab::n_emit - 1));
    const int cur = TokenVocab::output_of_token(c);
    c = TokenVocab::token_of_output(out_idx >= cur ? out_idx + 1 : out_idx);
  }
  return out;
}

double grid_distance(const TokenGrid& a, const TokenGrid& b,
                     const std::optional<std::vector<int>>& region) {
  if (a.width != b.width || a.height != b.height)
    throw ContractError("grid_distance: dimension mismatch");
  if (!region) {
    if (a.cells.empty()) throw ContractError("grid_distance: empty region");
    int diff = 0;
    for (std::size_t i = 0; i < a.cells.size(); ++i) diff += a.cells[i] != b.cells[i];
    return static_cast<double>(diff) / static_cast<double>(a.cells.size());
  }
  if (region->empty()) throw ContractError("grid_distance: empty region");
  int diff = 0;
  for (int c : *region) {
    if (c < 0 || c >= a.size()) throw ContractError("grid_distance: region cell out of range");
    diff += a.cells[static_cast<std::size_t>(c)] != b.cells[static_cast<std::size_t>(c)];
  }
  return static_cast<double>(diff) / static_cast<double>(region->size());
}

void write_grid(std::ostream& os, const TokenGrid& g) {
  os << "viscoglab-grid v1 " << g.width << ' ' << g.height << '\n';
  for (int y = 0; y < g.height; ++y) {
    for (int x = 0; x < g.width; ++x) os << (x ? " " : "") << g.at(x, y);
    os << '\n';
  }
}

TokenGrid read_grid(std::istream& is) {
  std::string magic, version;
  int w = 0, h = 0;
  if (!(is >> magic >> version >> w >> h) || magic != "viscoglab-grid" || version != "v1")
    throw DataError("missing grid header 'viscoglab-grid v1 <W> <H>'");
  if (w <= 0 || h <= 0) throw DataError("grid dimensions must be positive");
  TokenGrid g(w, h);
  for (auto& c : g.cells) {
    if (!(is >> c)) throw DataError("grid dump truncated");
    if (c < 0 || c >= TokenVocab::size) throw DataError("token id out of range: " + std::to_string(c));
  }
  return g;
}

void save_grid(const std::string& path, const TokenGrid& g) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open '" + path + "' for writing");
  write_grid(os, g);
}

TokenGrid load_grid(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open '" + path + "'");
  return read_grid(is);
}

}  // namespace viscog
