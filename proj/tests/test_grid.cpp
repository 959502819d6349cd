#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <functional>
#include <map>
#include <numeric>
#include <set>
#include <sstream>

#include "viscog/error.hpp"
#include "viscog/grid.hpp"
#include "viscog/image.hpp"
#include "viscog/scene.hpp"

using namespace viscog;

namespace {

// Reference labelling by union-find over horizontal and vertical pairs.
struct Component {
  int cls;
  int color;
  BBox bbox;
  int cells;
  double purity;
};

std::vector<Component> reference_components(const TokenGrid& g, int min_area) {
  const int w = g.width, h = g.height, n = w * h;
  std::vector<int> parent(static_cast<std::size_t>(n));
  std::iota(parent.begin(), parent.end(), 0);
  std::function<int(int)> find = [&](int x) {
    return parent[static_cast<std::size_t>(x)] == x ? x
                                                    : parent[static_cast<std::size_t>(x)] =
                                                          find(parent[static_cast<std::size_t>(x)]);
  };
  const auto cls = [&](int i) {
    const int t = g.cells[static_cast<std::size_t>(i)];
    return TokenVocab::is_object(t) ? TokenVocab::cls_of(t) : -1;
  };
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const int i = y * w + x;
      if (cls(i) < 0) continue;
      if (x + 1 < w && cls(i + 1) == cls(i)) parent[static_cast<std::size_t>(find(i))] = find(i + 1);
      if (y + 1 < h && cls(i + w) == cls(i)) parent[static_cast<std::size_t>(find(i))] = find(i + w);
    }
  std::map<int, std::vector<int>> groups;
  for (int i = 0; i < n; ++i)
    if (cls(i) >= 0) groups[find(i)].push_back(i);
  std::vector<Component> out;
  for (const auto& [root, cells] : groups) {
    if (static_cast<int>(cells.size()) < min_area) continue;
    std::array<int, kNumColors> hist{};
    BBox b{w, h, -1, -1};
    for (int i : cells) {
      hist[static_cast<std::size_t>(TokenVocab::color_of(g.cells[static_cast<std::size_t>(i)]))]++;
      b.x0 = std::min(b.x0, i % w);
      b.x1 = std::max(b.x1, i % w);
      b.y0 = std::min(b.y0, i / w);
      b.y1 = std::max(b.y1, i / w);
    }
    int best = 0;
    for (int c = 1; c < kNumColors; ++c)
      if (hist[static_cast<std::size_t>(c)] > hist[static_cast<std::size_t>(best)]) best = c;
    out.push_back({cls(root), best, b, static_cast<int>(cells.size()),
                   static_cast<double>(hist[static_cast<std::size_t>(best)]) / static_cast<double>(cells.size())});
  }
  std::sort(out.begin(), out.end(),
            [](const Component& a, const Component& b) { return std::tie(a.cls, a.bbox) < std::tie(b.cls, b.bbox); });
  return out;
}

void expect_same(const DetectorReport& rep, const std::vector<Component>& ref) {
  ASSERT_EQ(rep.detections.size(), ref.size());
  for (std::size_t i = 0; i < ref.size(); ++i) {
    const auto& d = rep.detections[i];
    EXPECT_EQ(d.cls, ref[i].cls);
    EXPECT_EQ(d.color, ref[i].color);
    EXPECT_EQ(d.bbox, ref[i].bbox);
    EXPECT_EQ(d.cell_count, ref[i].cells);
    EXPECT_DOUBLE_EQ(d.purity, ref[i].purity);
  }
}

Scene one_object(int cls, int color, BBox b) { return Scene{16, 16, {{cls, color, b}}}; }

}  // namespace

TEST(Vocab, TokenBijection) {
  std::set<int> seen;
  for (int c = 0; c < kNumClasses; ++c)
    for (int k = 0; k < kNumColors; ++k) {
      const int t = TokenVocab::object(c, k);
      EXPECT_TRUE(TokenVocab::is_object(t));
      EXPECT_EQ(TokenVocab::cls_of(t), c);
      EXPECT_EQ(TokenVocab::color_of(t), k);
      seen.insert(t);
    }
  EXPECT_EQ(seen.size(), 64u);
  EXPECT_EQ(TokenVocab::size, 66);
  for (int k = 0; k < TokenVocab::n_emit; ++k) {
    EXPECT_NE(TokenVocab::token_of_output(k), TokenVocab::mask);
    EXPECT_EQ(TokenVocab::output_of_token(TokenVocab::token_of_output(k)), k);
  }
}

TEST(Render, EmptySceneIsBackground) {
  const TokenGrid g = render_scene(Scene{});
  EXPECT_EQ(g.count(TokenVocab::background), 256);
}

TEST(Render, SingleObjectCells) {
  const TokenGrid g = render_scene(one_object(3, 0, {0, 0, 1, 1}));
  EXPECT_EQ(g.count(TokenVocab::object(3, 0)), 4);
  EXPECT_EQ(g.at(1, 1), TokenVocab::object(3, 0));
  EXPECT_EQ(g.at(2, 0), TokenVocab::background);
}

TEST(Detect, ThreeObjectsFullPurity) {
  Scene s{16, 16, {{0, 0, {1, 1, 3, 2}}, {1, 4, {8, 8, 9, 10}}, {6, 7, {12, 1, 14, 3}}}};
  const DetectorReport rep = detect(render_scene(s));
  ASSERT_EQ(rep.detections.size(), 3u);
  for (const auto& d : rep.detections) EXPECT_DOUBLE_EQ(d.purity, 1.0);
}

TEST(Detect, BackgroundGridIsEmpty) { EXPECT_TRUE(detect(TokenGrid(16, 16)).detections.empty()); }

TEST(Detect, MaskTokensAreAContractViolation) {
  TokenGrid g(16, 16);
  g.at(3, 3) = TokenVocab::mask;
  EXPECT_THROW(detect(g), ContractError);
}

TEST(Detect, NoisyObjectMatchesReferenceLabelling) {
  const TokenGrid clean = render_scene(one_object(2, 4, {5, 5, 8, 8}));
  const TokenGrid noisy = apply_noise(clean, {0.1, 13});
  expect_same(detect(noisy, 3), reference_components(noisy, 3));
}

TEST(Detect, RandomNoisyGridsMatchReferenceLabelling) {
  SuiteConfig c;
  c.n_prompts = 100;
  Rng rng(17);
  const auto suite = gen_training_suite(c, rng);
  for (std::size_t i = 0; i < suite.size(); ++i) {
    const TokenGrid clean = render_scene(sample_scene(suite[i], c.scene, rng));
    for (double p : {0.05, 0.2, 0.45}) {
      const TokenGrid noisy = apply_noise(clean, {p, i});
      for (int min_area : {1, 3, 5}) expect_same(detect(noisy, min_area), reference_components(noisy, min_area));
    }
  }
}

TEST(Detect, SameClassDifferentColoursMergeAndDiagonalsDoNot) {
  TokenGrid g(16, 16);
  g.at(2, 2) = TokenVocab::object(1, 0);
  g.at(3, 2) = TokenVocab::object(1, 0);
  g.at(4, 2) = TokenVocab::object(1, 5);
  g.at(5, 3) = TokenVocab::object(1, 0);  // touches only diagonally
  const auto rep = detect(g, 1);
  ASSERT_EQ(rep.detections.size(), 2u);
  EXPECT_EQ(rep.detections[0].cell_count, 3);
  EXPECT_EQ(rep.detections[0].color, 0);
  EXPECT_NEAR(rep.detections[0].purity, 2.0 / 3.0, 1e-15);
}

TEST(Property, DetectReconstructsNoiselessScenes) {
  SuiteConfig c;
  c.n_prompts = 300;
  Rng rng(23);
  for (const auto& spec : gen_training_suite(c, rng)) {
    const Scene s = sample_scene(spec, c.scene, rng);
    const auto rep = detect(render_scene(s), c.scene.min_object_area);
    std::vector<SceneObject> got;
    for (const auto& d : rep.detections) got.push_back({d.cls, d.color, d.bbox});
    auto want = s.objects;
    const auto key = [](const SceneObject& a, const SceneObject& b) { return std::tie(a.cls, a.bbox) < std::tie(b.cls, b.bbox); };
    std::sort(want.begin(), want.end(), key);
    EXPECT_EQ(got, want);
  }
}

TEST(Noise, ZeroProbabilityIsIdentity) {
  const TokenGrid g = render_scene(one_object(2, 4, {5, 5, 8, 8}));
  EXPECT_EQ(apply_noise(g, {0.0, 1}), g);
}

TEST(Noise, FlipCountFollowsBinomial) {
  const TokenGrid g = render_scene(one_object(2, 4, {5, 5, 8, 8}));
  long flips = 0;
  constexpr int seeds = 1000;
  for (int s = 0; s < seeds; ++s) {
    const TokenGrid n = apply_noise(g, {0.1, static_cast<std::uint64_t>(s)});
    ASSERT_EQ(n.count(TokenVocab::mask), 0);
    for (int i = 0; i < n.size(); ++i) flips += n.cells[static_cast<std::size_t>(i)] != g.cells[static_cast<std::size_t>(i)];
  }
  const double trials = 256.0 * seeds;
  const double mean = trials * 0.1, sd = std::sqrt(trials * 0.1 * 0.9);
  EXPECT_NEAR(static_cast<double>(flips), mean, 3.0 * sd);
  EXPECT_NEAR(static_cast<double>(flips) / seeds, 25.6, 3.0 * sd / seeds);
}

TEST(Noise, ReplacementTokensAreUniform) {
  const TokenGrid g(16, 16);
  std::map<int, int> hist;
  for (int s = 0; s < 2000; ++s) {
    const TokenGrid n = apply_noise(g, {0.3, static_cast<std::uint64_t>(s)});
    for (int t : n.cells)
      if (t != TokenVocab::background) hist[t]++;
  }
  EXPECT_EQ(hist.size(), 64u);
  double total = 0.0;
  for (auto& [t, c] : hist) total += c;
  const double e = total / 64.0;
  double chi = 0.0;
  for (auto& [t, c] : hist) chi += (c - e) * (c - e) / e;
  EXPECT_LT(chi, 110.0);  // 63 dof, far tail
}

TEST(Noise, InvalidProbabilityIsAConfigError) {
  EXPECT_THROW(apply_noise(TokenGrid(16, 16), {0.5, 1}), ConfigError);
  EXPECT_THROW(apply_noise(TokenGrid(16, 16), {-0.1, 1}), ConfigError);
}

TEST(Distance, Examples) {
  const TokenGrid a(16, 16);
  EXPECT_EQ(grid_distance(a, a), 0.0);
  TokenGrid b = a;
  for (int i = 0; i < 64; ++i) b.cells[static_cast<std::size_t>(i)] = TokenVocab::object(0, 0);
  EXPECT_DOUBLE_EQ(grid_distance(a, b), 0.25);
  std::vector<int> region(64);
  std::iota(region.begin(), region.end(), 0);
  EXPECT_DOUBLE_EQ(grid_distance(a, b, region), 1.0);
  EXPECT_THROW(grid_distance(a, b, std::vector<int>{}), ContractError);
  EXPECT_THROW(grid_distance(a, TokenGrid(8, 8)), ContractError);
}

TEST(Property, DistanceIsAMetric) {
  Rng rng(29);
  const auto random_grid = [&] {
    TokenGrid g(16, 16);
    for (auto& c : g.cells) c = rng.bernoulli(0.5) ? TokenVocab::background : TokenVocab::object(0, static_cast<int>(rng.below(3)));
    return g;
  };
  for (int t = 0; t < 200; ++t) {
    const TokenGrid a = random_grid(), b = random_grid(), c = random_grid();
    EXPECT_EQ(grid_distance(a, b), grid_distance(b, a));
    EXPECT_EQ(grid_distance(a, b) == 0.0, a == b);
    EXPECT_LE(grid_distance(a, c), grid_distance(a, b) + grid_distance(b, c) + 1e-15);
  }
}

TEST(Export, BackgroundImageIsUniform) {
  const RgbImage img = rasterize(TokenGrid(16, 16));
  EXPECT_EQ(img.width, 256);
  EXPECT_EQ(img.height, 256);
  const Rgb first = img.at(0, 0);
  for (int y = 0; y < img.height; y += 7)
    for (int x = 0; x < img.width; x += 5) ASSERT_EQ(img.at(x, y), first);
}

TEST(Export, DistinctTokensGetDistinctColours) {
  std::set<Rgb> seen;
  for (int t = 0; t < TokenVocab::size; ++t) seen.insert(token_rgb(t));
  EXPECT_EQ(seen.size(), static_cast<std::size_t>(TokenVocab::size));
}

TEST(Export, PngAndGridDumpRoundTrip) {
  const auto dir = std::filesystem::temp_directory_path() / "viscog_test_export";
  std::filesystem::create_directories(dir);
  Scene s{16, 16, {{0, 0, {1, 1, 3, 2}}, {5, 6, {8, 8, 9, 10}}}};
  const TokenGrid g = render_scene(s);
  const std::string path = (dir / "img.png").string();
  export_image(g, path);
  EXPECT_EQ(load_grid(path + ".grid"), g);
  const RgbImage back = read_png(path);
  const RgbImage want = rasterize(g);
  EXPECT_EQ(back.width, want.width);
  EXPECT_EQ(back.pixels, want.pixels);
  std::filesystem::remove_all(dir);
}

TEST(Export, GridDumpHeaderAndErrors) {
  TokenGrid g(3, 2);
  g.at(2, 1) = TokenVocab::object(7, 7);
  std::stringstream ss;
  write_grid(ss, g);
  EXPECT_EQ(ss.str().substr(0, 23), "viscoglab-grid v1 3 2\n0");
  EXPECT_EQ(read_grid(ss), g);
  std::stringstream bad("viscoglab-grid v1 2 2\n0 0\n0 99\n");
  EXPECT_THROW(read_grid(bad), DataError);
  EXPECT_THROW(load_grid("/nonexistent/dir/x.grid"), IoError);
}
