#include "viscog/scene.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "viscog/error.hpp"

namespace viscog {

namespace {

constexpr std::array<std::string_view, kNumRelations> kRelationNames = {
    "left_of", "right_of", "above", "below"};
constexpr std::array<std::string_view, kNumTemplateKinds> kTemplateNames = {
    "single_object", "two_object",       "counting",        "colors",
    "position",      "color_attr",       "unusual_color",   "unusual_position",
    "unusual_composition", "reasoning_alias"};
constexpr std::array<std::string_view, 4> kFillerNames = {"<pad>", "a", "photo", "of"};
constexpr std::array<std::string_view, 3> kCountNames = {"two", "three", "four"};
constexpr std::array<std::string_view, kNumRelations> kRelationWordNames = {
    "left-of", "right-of", "above", "below"};
constexpr std::array<std::string_view, kNumRelations> kHintWordNames = {
    "keep-left", "keep-right", "keep-top", "keep-bottom"};

int word_of(std::string_view name) {
  for (int i = 0; i < words::vocab_size; ++i)
    if (words::name(i) == name) return i;
  return -1;
}

}  // namespace

std::string_view to_string(RelationKind k) { return kRelationNames[static_cast<int>(k)]; }
std::string_view to_string(TemplateKind k) { return kTemplateNames[static_cast<int>(k)]; }

RelationKind relation_from_string(std::string_view s) {
  for (int i = 0; i < kNumRelations; ++i)
    if (kRelationNames[i] == s) return static_cast<RelationKind>(i);
  throw DataError("unknown relation kind '" + std::string(s) + "'");
}

TemplateKind template_kind_from_string(std::string_view s) {
  for (int i = 0; i < kNumTemplateKinds; ++i)
    if (kTemplateNames[i] == s) return static_cast<TemplateKind>(i);
  throw DataError("unknown template kind '" + std::string(s) + "'");
}

RelationKind inverse(RelationKind k) {
  switch (k) {
    case RelationKind::left_of: return RelationKind::right_of;
    case RelationKind::right_of: return RelationKind::left_of;
    case RelationKind::above: return RelationKind::below;
    case RelationKind::below: return RelationKind::above;
  }
  return k;
}

bool touches(const BBox& a, const BBox& b) {
  return a.x0 <= b.x1 + 1 && b.x0 <= a.x1 + 1 && a.y0 <= b.y1 + 1 && b.y0 <= a.y1 + 1;
}

std::optional<RelationKind> relation_of(const BBox& a, const BBox& b, double margin) {
  const double dx = b.centroid_x() - a.centroid_x();
  const double dy = b.centroid_y() - a.centroid_y();
  if (std::abs(dx) <= margin && std::abs(dy) <= margin) return std::nullopt;
  if (std::abs(dx) >= std::abs(dy))
    return dx > 0 ? RelationKind::left_of : RelationKind::right_of;
  return dy > 0 ? RelationKind::above : RelationKind::below;
}

// ---------------------------------------------------------------------------

namespace words {

int alias_word(std::string_view w) {
  for (std::size_t i = 0; i < kAliasWords.size(); ++i)
    if (kAliasWords[i] == w) return alias_base + static_cast<int>(i);
  throw DataError("unknown alias word '" + std::string(w) + "'");
}

std::string_view name(int id) {
  if (id >= 0 && id < 4) return kFillerNames[id];
  if (id == and_) return "and";
  if (id >= count_base && id < relation_base) return kCountNames[id - count_base];
  if (id >= relation_base && id < hint_base) return kRelationWordNames[id - relation_base];
  if (id >= hint_base && id < class_base) return kHintWordNames[id - hint_base];
  if (id >= class_base && id < color_base) return kClassNames[(id - class_base) % kNumClasses];
  if (id >= color_base && id < alias_base) return kColorNames[(id - color_base) % kNumColors];
  if (id >= alias_base && id < vocab_size) return kAliasWords[id - alias_base];
  throw DataError("word id out of range: " + std::to_string(id));
}

}  // namespace words

AliasTable AliasTable::standard() {
  auto phrase = [](std::initializer_list<std::string_view> ws) {
    std::vector<int> out;
    for (auto w : ws) out.push_back(words::alias_word(w));
    return out;
  };
  constexpr int dog = 0, cat = 1, car = 2, tree = 3, bird = 4, boat = 5, cup = 6, apple = 7;
  constexpr int red = 0, green = 3, blue = 4, white = 6, black = 7;
  AliasTable t;
  t.entries = {
      {phrase({"barking", "pet"}), dog, std::nullopt, std::nullopt},
      {phrase({"purring", "pet"}), cat, std::nullopt, std::nullopt},
      {phrase({"honking", "vehicle"}), car, std::nullopt, std::nullopt},
      {phrase({"leafy", "giant"}), tree, std::nullopt, std::nullopt},
      {phrase({"singing", "flyer"}), bird, std::nullopt, std::nullopt},
      {phrase({"sailing", "vessel"}), boat, std::nullopt, std::nullopt},
      {phrase({"tea", "vessel"}), cup, std::nullopt, std::nullopt},
      {phrase({"orchard", "fruit"}), apple, std::nullopt, std::nullopt},
      {phrase({"fire-engine", "vehicle"}), car, red, std::nullopt},
      {phrase({"night", "pet"}), cat, black, std::nullopt},
      {phrase({"sky", "flyer"}), bird, blue, std::nullopt},
      {phrase({"snowy", "pet"}), dog, white, std::nullopt},
      {phrase({"grassy", "fruit"}), apple, green, std::nullopt},
  };
  return t;
}

std::optional<int> AliasTable::find_target(int cls, std::optional<int> color) const {
  for (std::size_t i = 0; i < entries.size(); ++i)
    if (entries[i].cls == cls && entries[i].color == color) return static_cast<int>(i);
  return std::nullopt;
}

TypicalityTable TypicalityTable::standard() {
  // red orange yellow green blue purple white black
  TypicalityTable t;
  t.typical = {{
      {6, 7, 1},  // dog
      {7, 6, 1},  // cat
      {0, 4, 7},  // car
      {3, 2},     // tree
      {4, 2, 0},  // bird
      {6, 4},     // boat
      {6, 0},     // cup
      {0, 3, 2},  // apple
  }};
  return t;
}

bool TypicalityTable::is_typical(int cls, int color) const {
  const auto& t = typical.at(static_cast<std::size_t>(cls));
  return std::find(t.begin(), t.end(), color) != t.end();
}

std::vector<int> TypicalityTable::atypical(int cls) const {
  std::vector<int> out;
  for (int c = 0; c < kNumColors; ++c)
    if (!is_typical(cls, c)) out.push_back(c);
  return out;
}

int composition_group(int cls) {
  // dog cat car tree bird boat cup apple
  constexpr std::array<int, kNumClasses> g = {0, 0, 1, 1, 1, 1, 0, 0};
  return g.at(static_cast<std::size_t>(cls));
}

int height_rank(int cls) {
  constexpr std::array<int, kNumClasses> r = {1, 1, 0, 2, 3, 0, 1, 1};
  return r.at(static_cast<std::size_t>(cls));
}

bool is_typical_relation(int subject_cls, int object_cls, RelationKind k) {
  switch (k) {
    case RelationKind::left_of:
    case RelationKind::right_of: return true;
    case RelationKind::above: return height_rank(subject_cls) >= height_rank(object_cls);
    case RelationKind::below: return height_rank(subject_cls) <= height_rank(object_cls);
  }
  return true;
}

std::map<TemplateKind, double> SuiteConfig::default_training_proportions() {
  return {{TemplateKind::single_object, 0.10}, {TemplateKind::two_object, 0.15},
          {TemplateKind::counting, 0.15},      {TemplateKind::colors, 0.15},
          {TemplateKind::position, 0.15},      {TemplateKind::color_attr, 0.15},
          {TemplateKind::reasoning_alias, 0.15}};
}

std::map<TemplateKind, int> BenchSuiteConfig::default_counts() {
  return {{TemplateKind::single_object, 50},      {TemplateKind::two_object, 50},
          {TemplateKind::counting, 50},           {TemplateKind::colors, 50},
          {TemplateKind::position, 50},           {TemplateKind::color_attr, 50},
          {TemplateKind::unusual_position, 20},   {TemplateKind::unusual_composition, 20},
          {TemplateKind::unusual_color, 20},      {TemplateKind::reasoning_alias, 40}};
}

// ---------------------------------------------------------------------------
// text

std::vector<int> render_text(const PromptSpec& spec, const AliasTable& table,
                             int max_prompt_len) {
  std::vector<int> out = {words::a, words::photo, words::of};
  if (spec.alias_id) {
    if (*spec.alias_id < 0 || *spec.alias_id >= static_cast<int>(table.entries.size()))
      throw DataError("dangling alias id " + std::to_string(*spec.alias_id));
    out.push_back(words::a);
    for (int w : table.entries[static_cast<std::size_t>(*spec.alias_id)].phrase) out.push_back(w);
  } else {
    const auto mention = [&](std::size_t i) {
      const auto& o = spec.objects[i];
      const int role = std::min<int>(static_cast<int>(i), 1);
      out.push_back(o.count <= 1 ? words::a : words::count_word(o.count));
      if (o.color) out.push_back(words::color_word(*o.color, role));
      out.push_back(words::class_word(o.cls, role));
    };
    for (std::size_t i = 0; i < spec.objects.size(); ++i) {
      if (i > 0) {
        const auto rel = std::find_if(spec.relations.begin(), spec.relations.end(),
                                      [&](const Relation& r) {
                                        return r.subject == 0 && r.object == static_cast<int>(i);
                                      });
        out.push_back(rel != spec.relations.end() ? words::relation_word(rel->kind)
                                                  : words::and_);
      }
      mention(i);
    }
  }
  for (RelationKind h : spec.hints) out.push_back(words::hint_word(h));
  if (static_cast<int>(out.size()) > max_prompt_len)
    throw DataError("prompt needs " + std::to_string(out.size()) + " words, max_prompt_len is " +
                    std::to_string(max_prompt_len));
  out.resize(static_cast<std::size_t>(max_prompt_len), words::pad);
  return out;
}

std::string describe(const std::vector<int>& text) {
  std::string s;
  for (int w : text) {
    if (w == words::pad) continue;
    if (!s.empty()) s += ' ';
    s += words::name(w);
  }
  return s;
}

PromptSpec parse_prompt(std::string_view text, const AliasTable& table, const SceneConfig& cfg) {
  std::vector<std::string> toks;
  {
    std::istringstream is{std::string(text)};
    for (std::string t; is >> t;) {
      std::transform(t.begin(), t.end(), t.begin(), [](unsigned char c) { return std::tolower(c); });
      if (t == "of" && !toks.empty() && (toks.back() == "left" || toks.back() == "right")) {
        toks.back() += "-of";
        continue;
      }
      if (t == "an") t = "a";
      if (t.size() > 1 && t.back() == 's') {
        std::string sing = t.substr(0, t.size() - 1);
        if (std::find(kClassNames.begin(), kClassNames.end(), sing) != kClassNames.end()) t = sing;
      }
      toks.push_back(t);
    }
  }

  PromptSpec spec;
  std::vector<int> alias_words;
  std::optional<int> pending_color;
  int pending_count = 1;
  for (const auto& t : toks) {
    const int w = word_of(t);
    if (w < 0) throw DataError("unrecognised word '" + t + "' in prompt");
    if (w == words::a || w == words::photo || w == words::of || w == words::and_) continue;
    if (w >= words::count_base && w < words::relation_base) {
      pending_count = w - words::count_base + 2;
    } else if (w >= words::relation_base && w < words::hint_base) {
      spec.relations.push_back({0, 1, static_cast<RelationKind>(w - words::relation_base)});
    } else if (w >= words::hint_base && w < words::class_base) {
      spec.hints.push_back(static_cast<RelationKind>(w - words::hint_base));
    } else if (w >= words::color_base && w < words::alias_base) {
      pending_color = (w - words::color_base) % kNumColors;
    } else if (w >= words::class_base && w < words::color_base) {
      spec.objects.push_back({(w - words::class_base) % kNumClasses, pending_color, pending_count});
      pending_color.reset();
      pending_count = 1;
    } else {
      alias_words.push_back(w);
    }
  }

  if (!alias_words.empty()) {
    if (!spec.objects.empty()) throw DataError("prompt mixes alias phrase and class names");
    for (std::size_t i = 0; i < table.entries.size(); ++i) {
      if (table.entries[i].phrase == alias_words) {
        const auto& e = table.entries[i];
        spec.alias_id = static_cast<int>(i);
        spec.objects.push_back({e.cls, e.color, 1});
        spec.kind = TemplateKind::reasoning_alias;
        break;
      }
    }
    if (!spec.alias_id) throw DataError("alias phrase not found in table: '" + std::string(text) + "'");
  } else {
    if (spec.objects.empty() || spec.objects.size() > 2)
      throw DataError("prompt must mention one or two objects: '" + std::string(text) + "'");
    if (!spec.relations.empty() && spec.objects.size() != 2)
      throw DataError("relation needs two objects");
    const bool two = spec.objects.size() == 2;
    const bool colored = std::any_of(spec.objects.begin(), spec.objects.end(),
                                     [](const RequiredObject& o) { return o.color.has_value(); });
    if (spec.objects[0].count > 1)
      spec.kind = TemplateKind::counting;
    else if (!spec.relations.empty())
      spec.kind = TemplateKind::position;
    else if (two)
      spec.kind = colored ? TemplateKind::color_attr : TemplateKind::two_object;
    else
      spec.kind = colored ? TemplateKind::colors : TemplateKind::single_object;
    if (two && spec.objects[0].cls == spec.objects[1].cls)
      throw DataError("the two objects of a prompt must have distinct classes");
  }
  spec.text = render_text(spec, table, cfg.max_prompt_len);
  return spec;
}

// ---------------------------------------------------------------------------
// suites

namespace {

int pick(const std::vector<int>& xs, Rng& rng) {
  return xs[static_cast<std::size_t>(rng.below(xs.size()))];
}

std::pair<int, int> distinct_pair(Rng& rng) {
  const int a = static_cast<int>(rng.below(kNumClasses));
  int b = static_cast<int>(rng.below(kNumClasses - 1));
  if (b >= a) ++b;
  return {a, b};
}

std::pair<int, int> pair_where(Rng& rng, auto&& pred) {
  for (;;) {
    auto p = distinct_pair(rng);
    if (pred(p.first, p.second)) return p;
  }
}

// Objects with the smallest admissible footprint that still fit side by side.
int placement_capacity(const SceneConfig& cfg) {
  int best = 0;
  for (int w = 1; w <= cfg.max_object_side; ++w)
    for (int h = 1; h <= cfg.max_object_side; ++h) {
      if (w * h < cfg.min_object_area) continue;
      best = std::max(best, ((cfg.width + 1) / (w + 1)) * ((cfg.height + 1) / (h + 1)));
    }
  return best;
}

int objects_needed(TemplateKind kind, int count_max) {
  switch (kind) {
    case TemplateKind::single_object:
    case TemplateKind::colors:
    case TemplateKind::unusual_color:
    case TemplateKind::reasoning_alias: return 1;
    case TemplateKind::counting: return count_max;
    default: return 2;
  }
}

void check_satisfiable(TemplateKind kind, int count_min, int count_max, const SceneConfig& cfg) {
  const int need = objects_needed(kind, count_max);
  const int cap = std::min(cfg.max_objects, placement_capacity(cfg));
  if (kind == TemplateKind::counting && (count_min < 2 || count_max > 4 || count_min > count_max))
    throw ConfigError("template 'counting': count range must lie within [2, 4]");
  if (need > cap)
    throw ConfigError("template '" + std::string(to_string(kind)) + "' needs " +
                      std::to_string(need) + " objects but at most " + std::to_string(cap) +
                      " fit on a " + std::to_string(cfg.width) + "x" +
                      std::to_string(cfg.height) + " grid");
}

std::vector<PromptSpec> generate(const std::vector<std::pair<TemplateKind, int>>& plan,
                                 int count_min, int count_max, const SceneConfig& cfg,
                                 Rng& rng, bool shuffle) {
  const auto table = AliasTable::standard();
  const auto typ = TypicalityTable::standard();
  for (auto [kind, n] : plan)
    if (n > 0) check_satisfiable(kind, count_min, count_max, cfg);
  std::vector<PromptSpec> suite;
  for (auto [kind, n] : plan)
    for (int i = 0; i < n; ++i)
      suite.push_back(gen_prompt(kind, 0, count_min, count_max, cfg, table, typ, rng));
  if (shuffle) rng.shuffle(std::span(suite));
  for (std::size_t i = 0; i < suite.size(); ++i) suite[i].id = static_cast<int>(i);
  return suite;
}

}  // namespace

PromptSpec gen_prompt(TemplateKind kind, int id, int count_min, int count_max,
                      const SceneConfig& cfg, const AliasTable& table,
                      const TypicalityTable& typ, Rng& rng) {
  PromptSpec s;
  s.id = id;
  s.kind = kind;
  const auto any_class = [&] { return static_cast<int>(rng.below(kNumClasses)); };
  const auto any_relation = [&] { return static_cast<RelationKind>(rng.below(kNumRelations)); };
  switch (kind) {
    case TemplateKind::single_object:
      s.objects = {{any_class(), std::nullopt, 1}};
      break;
    case TemplateKind::two_object: {
      auto [a, b] = pair_where(rng, [](int x, int y) { return composition_group(x) == composition_group(y); });
      s.objects = {{a, std::nullopt, 1}, {b, std::nullopt, 1}};
      break;
    }
    case TemplateKind::counting:
      s.objects = {{any_class(), std::nullopt, rng.between(count_min, count_max)}};
      break;
    case TemplateKind::colors: {
      const int c = any_class();
      s.objects = {{c, pick(typ.typical[static_cast<std::size_t>(c)], rng), 1}};
      break;
    }
    case TemplateKind::position: {
      for (;;) {
        auto [a, b] = distinct_pair(rng);
        const auto k = any_relation();
        if (!is_typical_relation(a, b, k)) continue;
        s.objects = {{a, std::nullopt, 1}, {b, std::nullopt, 1}};
        s.relations = {{0, 1, k}};
        break;
      }
      break;
    }
    case TemplateKind::color_attr: {
      auto [a, b] = pair_where(rng, [](int x, int y) { return composition_group(x) == composition_group(y); });
      s.objects = {{a, pick(typ.typical[static_cast<std::size_t>(a)], rng), 1},
                   {b, pick(typ.typical[static_cast<std::size_t>(b)], rng), 1}};
      break;
    }
    case TemplateKind::unusual_color: {
      const int c = any_class();
      s.objects = {{c, pick(typ.atypical(c), rng), 1}};
      break;
    }
    case TemplateKind::unusual_position: {
      for (;;) {
        auto [a, b] = distinct_pair(rng);
        const auto k = rng.bernoulli(0.5) ? RelationKind::above : RelationKind::below;
        if (is_typical_relation(a, b, k)) continue;
        s.objects = {{a, std::nullopt, 1}, {b, std::nullopt, 1}};
        s.relations = {{0, 1, k}};
        break;
      }
      break;
    }
    case TemplateKind::unusual_composition: {
      auto [a, b] = pair_where(rng, [](int x, int y) { return composition_group(x) != composition_group(y); });
      s.objects = {{a, std::nullopt, 1}, {b, std::nullopt, 1}};
      break;
    }
    case TemplateKind::reasoning_alias: {
      const int e = static_cast<int>(rng.below(table.entries.size()));
      const auto& entry = table.entries[static_cast<std::size_t>(e)];
      s.alias_id = e;
      s.objects = {{entry.cls, entry.color, 1}};
      break;
    }
  }
  s.text = render_text(s, table, cfg.max_prompt_len);
  return s;
}

std::vector<PromptSpec> gen_training_suite(const SuiteConfig& cfg, Rng& rng) {
  if (cfg.n_prompts < 0) throw ConfigError("suite.n_prompts must be non-negative");
  double total = 0.0;
  for (auto [k, p] : cfg.proportions) {
    if (p < 0.0) throw ConfigError("suite.proportions." + std::string(to_string(k)) + " is negative");
    total += p;
  }
  if (std::abs(total - 1.0) > 1e-9)
    throw ConfigError("suite.proportions must sum to 1 (got " + std::to_string(total) + ")");

  // largest-remainder apportionment, ties by kind order
  std::vector<std::pair<TemplateKind, int>> plan;
  std::vector<std::pair<double, std::size_t>> rema;
  int assigned = 0;
  for (auto [k, p] : cfg.proportions) {
    const double exact = p * cfg.n_prompts;
    const int n = static_cast<int>(std::floor(exact));
    rema.emplace_back(exact - n, plan.size());
    plan.emplace_back(k, n);
    assigned += n;
  }
  std::stable_sort(rema.begin(), rema.end(), [](auto& a, auto& b) { return a.first > b.first; });
  for (std::size_t i = 0; assigned < cfg.n_prompts; ++i, ++assigned) plan[rema[i].second].second++;

  return generate(plan, cfg.count_min, cfg.count_max, cfg.scene, rng, true);
}

std::vector<PromptSpec> gen_benchmark_suite(const BenchSuiteConfig& cfg, Rng& rng) {
  std::vector<std::pair<TemplateKind, int>> plan(cfg.counts.begin(), cfg.counts.end());
  for (auto [k, n] : plan)
    if (n < 0) throw ConfigError("bench.counts." + std::string(to_string(k)) + " is negative");
  return generate(plan, cfg.count_min, cfg.count_max, cfg.scene, rng, false);
}

// ---------------------------------------------------------------------------
// scenes

namespace {

struct Slot {
  double cx, cy;
};

// Preferred centres for `n` instances; relations pin the first two.
std::vector<Slot> layout_slots(const PromptSpec& spec, int n, const SceneConfig& cfg) {
  const double w = cfg.width, h = cfg.height;
  const Slot left{w * 0.25, h * 0.5}, right{w * 0.75, h * 0.5};
  const Slot top{w * 0.5, h * 0.25}, bottom{w * 0.5, h * 0.75};
  if (!spec.relations.empty() && n == 2) {
    switch (spec.relations.front().kind) {
      case RelationKind::left_of: return {left, right};
      case RelationKind::right_of: return {right, left};
      case RelationKind::above: return {top, bottom};
      case RelationKind::below: return {bottom, top};
    }
  }
  switch (n) {
    case 1: return {{w * 0.5, h * 0.5}};
    case 2: return {left, right};
    case 3: return {{w / 6.0, h * 0.5}, {w * 0.5, h * 0.5}, {w * 5.0 / 6.0, h * 0.5}};
    case 4: return {{w * 0.25, h * 0.25}, {w * 0.75, h * 0.25}, {w * 0.25, h * 0.75}, {w * 0.75, h * 0.75}};
    default: break;
  }
  std::vector<Slot> out;
  for (int i = 0; i < n; ++i) out.push_back({w * (i + 0.5) / n, h * 0.5});
  return out;
}

BBox draw_box(const SceneConfig& cfg, Rng& rng, const Slot* slot) {
  const int max_w = std::min(cfg.max_object_side, cfg.width);
  const int max_h = std::min(cfg.max_object_side, cfg.height);
  if (max_w * max_h < cfg.min_object_area)
    throw SatisfiabilityError("no object footprint of area >= " +
                              std::to_string(cfg.min_object_area) + " fits the grid");
  int bw, bh;
  do {
    bw = rng.between(1, max_w);
    bh = rng.between(1, max_h);
  } while (bw * bh < cfg.min_object_area);
  int x0, y0;
  if (slot) {
    const int j = cfg.layout_jitter;
    x0 = static_cast<int>(std::lround(slot->cx - bw / 2.0)) + rng.between(-j, j);
    y0 = static_cast<int>(std::lround(slot->cy - bh / 2.0)) + rng.between(-j, j);
    x0 = std::clamp(x0, 0, cfg.width - bw);
    y0 = std::clamp(y0, 0, cfg.height - bh);
  } else {
    x0 = rng.between(0, cfg.width - bw);
    y0 = rng.between(0, cfg.height - bh);
  }
  return {x0, y0, x0 + bw - 1, y0 + bh - 1};
}

}  // namespace

bool scene_is_valid(const Scene& s, int min_object_area) {
  for (std::size_t i = 0; i < s.objects.size(); ++i) {
    const auto& b = s.objects[i].bbox;
    if (b.x0 < 0 || b.y0 < 0 || b.x1 >= s.width || b.y1 >= s.height || b.x0 > b.x1 || b.y0 > b.y1)
      return false;
    if (b.area() < min_object_area) return false;
    for (std::size_t j = 0; j < i; ++j)
      if (touches(b, s.objects[j].bbox)) return false;
  }
  return true;
}

Scene sample_scene(const PromptSpec& spec, const SceneConfig& cfg, Rng& rng) {
  const auto typ = TypicalityTable::standard();
  struct Instance {
    int cls;
    std::optional<int> color;
    std::size_t entry;
  };
  std::vector<Instance> inst;
  for (std::size_t e = 0; e < spec.objects.size(); ++e)
    for (int k = 0; k < spec.objects[e].count; ++k)
      inst.push_back({spec.objects[e].cls, spec.objects[e].color, e});
  if (static_cast<int>(inst.size()) > cfg.max_objects)
    throw SatisfiabilityError("spec " + std::to_string(spec.id) + " asks for " +
                              std::to_string(inst.size()) + " objects, max_objects is " +
                              std::to_string(cfg.max_objects));

  // first instance of each entry carries that entry's relations
  std::vector<std::size_t> first_of(spec.objects.size(), 0);
  for (std::size_t i = inst.size(); i-- > 0;) first_of[inst[i].entry] = i;

  const auto slots = layout_slots(spec, static_cast<int>(inst.size()), cfg);
  Scene scene{cfg.width, cfg.height, {}};
  for (int attempt = 0; attempt < cfg.max_retries; ++attempt) {
    const bool anchored = attempt < cfg.max_retries / 2;
    scene.objects.clear();
    bool ok = true;
    for (std::size_t i = 0; i < inst.size() && ok; ++i) {
      const BBox b = draw_box(cfg, rng, anchored ? &slots[i] : nullptr);
      for (const auto& o : scene.objects)
        if (touches(b, o.bbox)) ok = false;
      const int color = inst[i].color ? *inst[i].color
                                      : pick(typ.typical[static_cast<std::size_t>(inst[i].cls)], rng);
      scene.objects.push_back({inst[i].cls, color, b});
    }
    if (!ok) continue;
    for (const auto& r : spec.relations) {
      const auto& a = scene.objects[first_of[static_cast<std::size_t>(r.subject)]].bbox;
      const auto& b = scene.objects[first_of[static_cast<std::size_t>(r.object)]].bbox;
      if (relation_of(a, b, cfg.relation_margin) != r.kind) ok = false;
    }
    if (ok) return scene;
  }
  throw SatisfiabilityError("could not place spec " + std::to_string(spec.id) + " (" +
                            std::string(to_string(spec.kind)) + ") after " +
                            std::to_string(cfg.max_retries) + " attempts");
}

std::vector<PromptSpec> resolve_alias(const PromptSpec& spec, const AliasTable& table,
                                      int n_distractors, int max_prompt_len) {
  if (!spec.alias_id) return {spec};
  const int a = *spec.alias_id;
  if (a < 0 || a >= static_cast<int>(table.entries.size()))
    throw DataError("dangling alias id " + std::to_string(a) + " in spec " + std::to_string(spec.id));
  const auto& truth = table.entries[static_cast<std::size_t>(a)];

  const auto canonical = [&](const AliasEntry& e) {
    PromptSpec c;
    c.id = spec.id;
    c.kind = e.color ? TemplateKind::colors : TemplateKind::single_object;
    c.objects = {{e.cls, e.color, 1}};
    c.text = render_text(c, table, max_prompt_len);
    return c;
  };

  std::vector<int> pool;
  for (std::size_t i = 0; i < table.entries.size(); ++i) {
    const auto& e = table.entries[i];
    if (static_cast<int>(i) != a && !(e.cls == truth.cls && e.color == truth.color))
      pool.push_back(static_cast<int>(i));
  }
  Rng rng(derive_seed(0xA11A5ULL, {static_cast<std::uint64_t>(a)}));
  rng.shuffle(std::span(pool));
  pool.resize(std::min<std::size_t>(pool.size(), static_cast<std::size_t>(std::max(0, n_distractors))));

  std::vector<PromptSpec> out = {canonical(truth)};
  for (int i : pool) out.push_back(canonical(table.entries[static_cast<std::size_t>(i)]));
  return out;
}

}  // namespace viscog
