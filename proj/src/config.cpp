#include "viscog/config.hpp"

#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "viscog/error.hpp"

namespace viscog {

namespace {

using ojson = nlohmann::ordered_json;

// sections whose keys are data (template kinds), not field names
bool is_map_section(const std::string& path) { return path == "suite.proportions" || path == "bench_suite.counts"; }

ojson to_json(const RunConfig& c) {
  ojson j;
  j["run_id"] = c.run_id;
  j["seed"] = c.seed;
  j["workers"] = c.trainer.workers;
  const SceneConfig& s = c.suite.scene;
  j["scene"] = {{"width", s.width},
                {"height", s.height},
                {"max_objects", s.max_objects},
                {"min_object_area", s.min_object_area},
                {"max_object_side", s.max_object_side},
                {"layout_jitter", s.layout_jitter},
                {"max_retries", s.max_retries},
                {"max_prompt_len", s.max_prompt_len},
                {"n_distractors", s.n_distractors}};
  ojson props = ojson::object();
  for (const auto& [k, p] : c.suite.proportions) props[std::string(to_string(k))] = p;
  j["suite"] = {{"n_prompts", c.suite.n_prompts},
                {"count_min", c.suite.count_min},
                {"count_max", c.suite.count_max},
                {"proportions", props}};
  ojson counts = ojson::object();
  for (const auto& [k, n] : c.bench_suite.counts) counts[std::string(to_string(k))] = n;
  j["bench_suite"] = {{"counts", counts}};
  j["model"] = {{"d_embed", c.model.d_embed}, {"d_hidden", c.model.d_hidden}, {"init_scale", c.init_scale}};
  j["schedule"] = {{"steps", c.trainer.schedule.steps}, {"temperature", c.trainer.schedule.temperature}};
  j["rewards"] = {{"tau_scale", c.trainer.outcome.count.tau_scale},
                  {"process_exponent", c.trainer.process.exponent},
                  {"process_steps", c.trainer.process.steps},
                  {"relation_margin", c.trainer.outcome.rules.margin},
                  {"detect_min_area", c.trainer.outcome.detect_min_area},
                  {"flip_prob", c.trainer.outcome.flip_prob}};
  j["pretrain"] = {{"optimizer", c.pretrain.optimizer == PretrainOptimizer::adam ? "adam" : "sgd"},
                   {"lr", c.pretrain.lr},
                   {"steps", c.pretrain.steps},
                   {"batch", c.pretrain.batch},
                   {"mask_min", c.pretrain.mask_min},
                   {"mask_max", c.pretrain.mask_max},
                   {"seed", c.pretrain.seed},
                   {"per_prompt", c.pretrain_per_prompt}};
  const TrainConfig& t = c.trainer;
  j["trainer"] = {{"group_size", t.group_size},
                  {"epsilon", t.epsilon},
                  {"lr", t.lr},
                  {"reasoner_lr", t.reasoner_lr},
                  {"steps", t.steps},
                  {"inner_epochs", t.inner_epochs},
                  {"kl_coef", t.kl_coef},
                  {"rewards", {{"r_r", t.toggles.r_r}, {"r_p", t.toggles.r_p}, {"r_o", t.toggles.r_o}}},
                  {"checkpoint_every", c.checkpoint_every},
                  {"eval_every", c.eval_every}};
  j["bench"] = {{"images_per_prompt", c.bench.images_per_prompt},
                {"seed", c.bench.seed},
                {"flip_prob", c.bench.flip_prob}};
  ojson rows = ojson::array();
  for (const auto& r : c.ablation.rows) rows.push_back({r.r_r, r.r_p, r.r_o});
  j["ablation"] = {{"rows", rows}, {"seeds", c.ablation.seeds}};
  return j;
}

template <typename T>
T get(const ojson& j, const std::string& path, const char* key) {
  const std::string full = path.empty() ? key : path + "." + key;
  try {
    return j.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw ConfigError("config field '" + full + "' has the wrong type");
  }
}

RunConfig from_json(const ojson& j) {
  RunConfig c;
  c.run_id = get<std::string>(j, "", "run_id");
  c.seed = get<std::uint64_t>(j, "", "seed");
  c.trainer.workers = get<int>(j, "", "workers");

  const auto& s = j.at("scene");
  SceneConfig sc;
  sc.width = get<int>(s, "scene", "width");
  sc.height = get<int>(s, "scene", "height");
  sc.max_objects = get<int>(s, "scene", "max_objects");
  sc.min_object_area = get<int>(s, "scene", "min_object_area");
  sc.max_object_side = get<int>(s, "scene", "max_object_side");
  sc.layout_jitter = get<int>(s, "scene", "layout_jitter");
  sc.max_retries = get<int>(s, "scene", "max_retries");
  sc.max_prompt_len = get<int>(s, "scene", "max_prompt_len");
  sc.n_distractors = get<int>(s, "scene", "n_distractors");

  const auto& r = j.at("rewards");
  c.trainer.outcome.count.tau_scale = get<double>(r, "rewards", "tau_scale");
  c.trainer.process.exponent = get<double>(r, "rewards", "process_exponent");
  c.trainer.process.steps = get<std::vector<int>>(r, "rewards", "process_steps");
  c.trainer.outcome.rules.margin = get<double>(r, "rewards", "relation_margin");
  c.trainer.outcome.detect_min_area = get<int>(r, "rewards", "detect_min_area");
  c.trainer.outcome.flip_prob = get<double>(r, "rewards", "flip_prob");
  c.trainer.outcome.max_objects = sc.max_objects;
  sc.relation_margin = c.trainer.outcome.rules.margin;
  if (sc.width <= 0 || sc.height <= 0) throw ConfigError("scene.width/height must be positive");
  if (!(c.trainer.outcome.flip_prob >= 0.0 && c.trainer.outcome.flip_prob < 0.5))
    throw ConfigError("rewards.flip_prob must lie in [0, 0.5)");
  if (c.trainer.outcome.rules.margin < 0.0) throw ConfigError("rewards.relation_margin must be >= 0");

  const auto& su = j.at("suite");
  c.suite.scene = sc;
  c.suite.n_prompts = get<int>(su, "suite", "n_prompts");
  c.suite.count_min = get<int>(su, "suite", "count_min");
  c.suite.count_max = get<int>(su, "suite", "count_max");
  c.suite.proportions.clear();
  for (const auto& [k, v] : su.at("proportions").items()) {
    TemplateKind kind;
    try {
      kind = template_kind_from_string(k);
    } catch (const Error&) {
      throw ConfigError("config field 'suite.proportions." + k + "' is not a template kind");
    }
    if (!v.is_number()) throw ConfigError("config field 'suite.proportions." + k + "' must be a number");
    c.suite.proportions[kind] = v.get<double>();
  }
  c.bench_suite.scene = sc;
  c.bench_suite.count_min = c.suite.count_min;
  c.bench_suite.count_max = c.suite.count_max;
  c.bench_suite.counts.clear();
  for (const auto& [k, v] : j.at("bench_suite").at("counts").items()) {
    TemplateKind kind;
    try {
      kind = template_kind_from_string(k);
    } catch (const Error&) {
      throw ConfigError("config field 'bench_suite.counts." + k + "' is not a template kind");
    }
    if (!v.is_number_integer() || v.get<int>() < 0)
      throw ConfigError("config field 'bench_suite.counts." + k + "' must be a non-negative integer");
    c.bench_suite.counts[kind] = v.get<int>();
  }

  const auto& m = j.at("model");
  c.model.width = sc.width;
  c.model.height = sc.height;
  c.model.d_embed = get<int>(m, "model", "d_embed");
  c.model.d_hidden = get<int>(m, "model", "d_hidden");
  c.init_scale = get<double>(m, "model", "init_scale");
  if (c.model.d_embed <= 0 || c.model.d_hidden <= 0) throw ConfigError("model dimensions must be positive");

  const auto& sch = j.at("schedule");
  c.trainer.schedule.steps = get<int>(sch, "schedule", "steps");
  c.trainer.schedule.temperature = get<double>(sch, "schedule", "temperature");
  c.trainer.schedule.validate(c.model.n_cells());

  const auto& p = j.at("pretrain");
  const auto opt = get<std::string>(p, "pretrain", "optimizer");
  if (opt == "adam") c.pretrain.optimizer = PretrainOptimizer::adam;
  else if (opt == "sgd") c.pretrain.optimizer = PretrainOptimizer::sgd;
  else throw ConfigError("pretrain.optimizer must be 'adam' or 'sgd' (got '" + opt + "')");
  c.pretrain.lr = get<double>(p, "pretrain", "lr");
  c.pretrain.steps = get<int>(p, "pretrain", "steps");
  c.pretrain.batch = get<int>(p, "pretrain", "batch");
  c.pretrain.mask_min = get<double>(p, "pretrain", "mask_min");
  c.pretrain.mask_max = get<double>(p, "pretrain", "mask_max");
  c.pretrain.seed = get<std::uint64_t>(p, "pretrain", "seed");
  c.pretrain_per_prompt = get<int>(p, "pretrain", "per_prompt");
  if (c.pretrain_per_prompt < 1) throw ConfigError("pretrain.per_prompt must be at least 1");

  const auto& t = j.at("trainer");
  c.trainer.group_size = get<int>(t, "trainer", "group_size");
  c.trainer.epsilon = get<double>(t, "trainer", "epsilon");
  c.trainer.lr = get<double>(t, "trainer", "lr");
  c.trainer.reasoner_lr = get<double>(t, "trainer", "reasoner_lr");
  c.trainer.steps = get<int>(t, "trainer", "steps");
  c.trainer.inner_epochs = get<int>(t, "trainer", "inner_epochs");
  c.trainer.kl_coef = get<double>(t, "trainer", "kl_coef");
  const auto& tg = t.at("rewards");
  c.trainer.toggles = {get<bool>(tg, "trainer.rewards", "r_r"), get<bool>(tg, "trainer.rewards", "r_p"),
                       get<bool>(tg, "trainer.rewards", "r_o")};
  c.checkpoint_every = get<int>(t, "trainer", "checkpoint_every");
  c.eval_every = get<int>(t, "trainer", "eval_every");
  c.trainer.seed = c.seed;
  c.trainer.validate(c.model.n_cells());
  if (c.checkpoint_every < 0 || c.eval_every < 0)
    throw ConfigError("trainer.checkpoint_every/eval_every must be non-negative");

  const auto& b = j.at("bench");
  c.bench.images_per_prompt = get<int>(b, "bench", "images_per_prompt");
  c.bench.seed = get<std::uint64_t>(b, "bench", "seed");
  c.bench.flip_prob = get<double>(b, "bench", "flip_prob");
  c.bench.schedule = c.trainer.schedule;
  c.bench.rules = c.trainer.outcome.rules;
  c.bench.detect_min_area = c.trainer.outcome.detect_min_area;
  c.bench.max_prompt_len = sc.max_prompt_len;
  if (c.bench.images_per_prompt < 1) throw ConfigError("bench.images_per_prompt must be at least 1");
  if (!(c.bench.flip_prob >= 0.0 && c.bench.flip_prob < 0.5))
    throw ConfigError("bench.flip_prob must lie in [0, 0.5)");

  const auto& a = j.at("ablation");
  c.ablation.rows.clear();
  for (const auto& row : a.at("rows")) {
    if (!row.is_array() || row.size() != 3)
      throw ConfigError("config field 'ablation.rows' entries must be [r_r, r_p, r_o] triples");
    const auto flag = [](const ojson& v) {
      if (v.is_boolean()) return v.get<bool>();
      if (v.is_number_integer() && (v.get<int>() == 0 || v.get<int>() == 1)) return v.get<int>() == 1;
      throw ConfigError("config field 'ablation.rows' entries must hold booleans or 0/1");
    };
    c.ablation.rows.push_back({flag(row[0]), flag(row[1]), flag(row[2])});
  }
  c.ablation.seeds = get<std::vector<std::uint64_t>>(a, "ablation", "seeds");
  return c;
}

// Overlays `user` on `base`, rejecting fields `base` does not have.
void merge_checked(ojson& base, const ojson& user, const std::string& path) {
  if (!user.is_object()) throw ConfigError("config section '" + (path.empty() ? "<root>" : path) + "' must be an object");
  for (const auto& [k, v] : user.items()) {
    const std::string full = path.empty() ? k : path + "." + k;
    if (!base.contains(k)) throw ConfigError("unknown config field '" + full + "'");
    auto& slot = base[k];
    if (slot.is_object() && !is_map_section(full))
      merge_checked(slot, v, full);
    else
      slot = v;
  }
}

RunConfig parse_json(const ojson& user) {
  ojson merged = to_json(default_config());
  merge_checked(merged, user, "");
  return from_json(merged);
}

}  // namespace

RunConfig default_config() {
  RunConfig c;
  c.ablation.rows = {{false, false, true}, {true, false, true}, {false, true, true}, {true, true, true}};
  c.ablation.seeds = {1, 2, 3};
  c.bench.schedule = c.trainer.schedule;
  return c;
}

RunConfig parse_config(std::string_view json_text) {
  ojson user;
  try {
    user = ojson::parse(json_text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  return parse_json(user);
}

RunConfig load_config(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open config '" + path + "'");
  std::stringstream ss;
  ss << is.rdbuf();
  return parse_config(ss.str());
}

RunConfig apply_overrides(const RunConfig& cfg, const std::vector<std::string>& sets) {
  ojson j = to_json(cfg);
  for (const auto& s : sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos || eq == 0) throw ConfigError("override '" + s + "' is not of the form a.b=value");
    const std::string path = s.substr(0, eq);
    const std::string raw = s.substr(eq + 1);
    ojson value;
    try {
      value = ojson::parse(raw);
    } catch (const nlohmann::json::parse_error&) {
      value = raw;
    }
    ojson* node = &j;
    std::string walked;
    std::size_t start = 0;
    while (true) {
      const auto dot = path.find('.', start);
      const std::string key = path.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
      walked += (walked.empty() ? "" : ".") + key;
      if (!node->is_object() || (!node->contains(key) && !is_map_section(walked.substr(0, walked.rfind('.')))))
        throw ConfigError("unknown config field '" + walked + "'");
      node = &(*node)[key];
      if (dot == std::string::npos) break;
      start = dot + 1;
    }
    *node = value;
  }
  return parse_json(j);
}

std::string resolved_json(const RunConfig& cfg) { return to_json(cfg).dump(2) + "\n"; }

void write_resolved(const std::string& dir, const RunConfig& cfg) {
  std::filesystem::create_directories(dir);
  const auto path = std::filesystem::path(dir) / "config.resolved";
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot write '" + path.string() + "'");
  os << resolved_json(cfg);
}

}  // namespace viscog
