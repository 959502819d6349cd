#pragma once

#include <array>
#include <compare>
#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "viscog/rng.hpp"

namespace viscog {

inline constexpr int kNumClasses = 8;
inline constexpr int kNumColors = 8;

inline constexpr std::array<std::string_view, kNumClasses> kClassNames = {
    "dog", "cat", "car", "tree", "bird", "boat", "cup", "apple"};
inline constexpr std::array<std::string_view, kNumColors> kColorNames = {
    "red", "orange", "yellow", "green", "blue", "purple", "white", "black"};

enum class RelationKind : std::uint8_t { left_of, right_of, above, below };
inline constexpr int kNumRelations = 4;

enum class TemplateKind : std::uint8_t {
  single_object,
  two_object,
  counting,
  colors,
  position,
  color_attr,
  unusual_color,
  unusual_position,
  unusual_composition,
  reasoning_alias,
};
inline constexpr int kNumTemplateKinds = 10;

std::string_view to_string(RelationKind k);
std::string_view to_string(TemplateKind k);
RelationKind relation_from_string(std::string_view s);
TemplateKind template_kind_from_string(std::string_view s);
RelationKind inverse(RelationKind k);

/// Inclusive cell rectangle.
struct BBox {
  int x0 = 0, y0 = 0, x1 = 0, y1 = 0;

  int width() const { return x1 - x0 + 1; }
  int height() const { return y1 - y0 + 1; }
  int area() const { return width() * height(); }
  double centroid_x() const { return 0.5 * (x0 + x1); }
  double centroid_y() const { return 0.5 * (y0 + y1); }
  bool contains(int x, int y) const { return x >= x0 && x <= x1 && y >= y0 && y <= y1; }

  friend auto operator<=>(const BBox&, const BBox&) = default;
};

/// True when the boxes share a cell or touch along an edge or a corner.
bool touches(const BBox& a, const BBox& b);

/// Axis-dominance relation of `a` with respect to `b` from centroid deltas.
/// Returns nullopt when both |dx| and |dy| are within `margin` cells.
std::optional<RelationKind> relation_of(const BBox& a, const BBox& b, double margin);

struct SceneObject {
  int cls = 0;
  int color = 0;
  BBox bbox;
  friend bool operator==(const SceneObject&, const SceneObject&) = default;
};

struct Scene {
  int width = 16;
  int height = 16;
  std::vector<SceneObject> objects;
};

struct Relation {
  int subject = 0;  // index into PromptSpec::objects
  int object = 1;
  RelationKind kind = RelationKind::left_of;
  friend bool operator==(const Relation&, const Relation&) = default;
};

struct RequiredObject {
  int cls = 0;
  std::optional<int> color;
  int count = 1;
  friend bool operator==(const RequiredObject&, const RequiredObject&) = default;
};

/// Structured ground truth of one prompt. Scoring only ever reads the
/// ground-truth fields; `text` is what the generator is conditioned on.
struct PromptSpec {
  int id = 0;
  TemplateKind kind = TemplateKind::single_object;
  std::vector<RequiredObject> objects;
  std::vector<Relation> relations;
  std::vector<RelationKind> hints;  // layout hints appended by a rewrite
  std::vector<int> text;            // word ids, padded with 0 to a fixed width
  std::optional<int> alias_id;

  friend bool operator==(const PromptSpec&, const PromptSpec&) = default;
};

// ---------------------------------------------------------------------------
// Word vocabulary. Class and color words are tagged with the role (first or
// second mentioned object) so that attribute binding survives a bag-of-words
// encoder.

namespace words {
inline constexpr int pad = 0;
inline constexpr int a = 1;
inline constexpr int photo = 2;
inline constexpr int of = 3;
inline constexpr int and_ = 4;
inline constexpr int count_base = 5;     // two, three, four
inline constexpr int relation_base = 8;  // 4 relation words
inline constexpr int hint_base = 12;     // 4 hint words
inline constexpr int class_base = 16;    // 2 roles x 8 classes
inline constexpr int color_base = 32;    // 2 roles x 8 colors
inline constexpr int alias_base = 48;

inline constexpr std::array<std::string_view, 19> kAliasWords = {
    "barking", "purring", "honking", "leafy",  "singing", "sailing", "tea",
    "orchard", "fire-engine", "night", "sky", "snowy", "grassy", "pet",
    "vehicle", "giant", "flyer", "vessel", "fruit"};

inline constexpr int vocab_size = alias_base + static_cast<int>(kAliasWords.size());

constexpr int class_word(int cls, int role) { return class_base + role * kNumClasses + cls; }
constexpr int color_word(int color, int role) { return color_base + role * kNumColors + color; }
constexpr int count_word(int n) { return count_base + n - 2; }
constexpr int relation_word(RelationKind k) { return relation_base + static_cast<int>(k); }
constexpr int hint_word(RelationKind k) { return hint_base + static_cast<int>(k); }
int alias_word(std::string_view w);

/// Surface form of a word id (role tags are not shown).
std::string_view name(int id);
}  // namespace words

struct AliasEntry {
  std::vector<int> phrase;  // alias word ids
  int cls = 0;
  std::optional<int> color;
  std::optional<RelationKind> relation_hint;
};

struct AliasTable {
  std::vector<AliasEntry> entries;

  static AliasTable standard();
  /// Index of the entry whose canonical target is (cls, color), if any.
  std::optional<int> find_target(int cls, std::optional<int> color) const;
};

struct TypicalityTable {
  std::array<std::vector<int>, kNumClasses> typical;

  static TypicalityTable standard();
  bool is_typical(int cls, int color) const;
  std::vector<int> atypical(int cls) const;
};

/// Co-occurrence group of a class; pairs across groups are "unusual
/// compositions".
int composition_group(int cls);
/// Vertical rank of a class; placing a lower-ranked class above a
/// higher-ranked one is an "unusual position".
int height_rank(int cls);
bool is_typical_relation(int subject_cls, int object_cls, RelationKind k);

struct SceneConfig {
  int width = 16;
  int height = 16;
  int max_objects = 4;
  int min_object_area = 4;
  int max_object_side = 3;
  int layout_jitter = 0;
  int max_retries = 200;
  int max_prompt_len = 16;
  int n_distractors = 3;
  double relation_margin = 1.0;
};

struct SuiteConfig {
  int n_prompts = 2000;
  std::map<TemplateKind, double> proportions = default_training_proportions();
  int count_min = 2;
  int count_max = 4;
  SceneConfig scene;

  static std::map<TemplateKind, double> default_training_proportions();
};

/// Per-subtask prompt counts for a benchmark suite.
struct BenchSuiteConfig {
  std::map<TemplateKind, int> counts = default_counts();
  int count_min = 2;
  int count_max = 4;
  SceneConfig scene;

  static std::map<TemplateKind, int> default_counts();
};

/// Renders the word-id sequence for a spec from its ground truth (or its
/// alias phrase), padded to `max_prompt_len`.
std::vector<int> render_text(const PromptSpec& spec, const AliasTable& table, int max_prompt_len);
/// Human-readable form of a padded word-id sequence.
std::string describe(const std::vector<int>& text);
/// Parses a template-shaped prompt ("a red dog left of a blue cat", "three
/// cups", "a barking pet") back into a spec.
PromptSpec parse_prompt(std::string_view text, const AliasTable& table, const SceneConfig& cfg);

/// Draws one prompt of the given kind.
PromptSpec gen_prompt(TemplateKind kind, int id, int count_min, int count_max,
                      const SceneConfig& cfg, const AliasTable& table,
                      const TypicalityTable& typ, Rng& rng);

std::vector<PromptSpec> gen_training_suite(const SuiteConfig& cfg, Rng& rng);
std::vector<PromptSpec> gen_benchmark_suite(const BenchSuiteConfig& cfg, Rng& rng);

/// Realizes a scene satisfying every constraint of `spec` exactly.
Scene sample_scene(const PromptSpec& spec, const SceneConfig& cfg, Rng& rng);
bool scene_is_valid(const Scene& s, int min_object_area);

/// Canonical readings of an aliased prompt: the true target first, then
/// `n_distractors` other table targets. Unaliased prompts map to themselves.
std::vector<PromptSpec> resolve_alias(const PromptSpec& spec, const AliasTable& table,
                                      int n_distractors = 3, int max_prompt_len = 16);

// suite file: "viscoglab-suite v1" header, then one JSON record per line
void write_suite(std::ostream& os, const std::vector<PromptSpec>& suite);
std::vector<PromptSpec> read_suite(std::istream& is);
void save_suite(const std::string& path, const std::vector<PromptSpec>& suite);
std::vector<PromptSpec> load_suite(const std::string& path);
std::string spec_to_line(const PromptSpec& spec);
PromptSpec spec_from_line(std::string_view line);

}  // namespace viscog
