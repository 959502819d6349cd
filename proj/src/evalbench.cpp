#include "viscog/evalbench.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "viscog/error.hpp"

namespace viscog {

ImageScore score_report(const DetectorReport& report, const PromptSpec& spec, const RelationRuleset& rules) {
  ImageScore s{true, true, true, true};
  for (const auto& o : spec.objects) {
    const int n = report.count_class(o.cls);
    if (n == 0) s.presence = false;
    if (n != o.count) s.counts = false;
    if (o.color) {
      const Detection* d = report.best_of(o.cls);
      if (!d || d->color != *o.color) s.colors = false;
    }
  }
  for (const auto& r : spec.relations) {
    const Detection* a = report.best_of(spec.objects[static_cast<std::size_t>(r.subject)].cls);
    const Detection* b = report.best_of(spec.objects[static_cast<std::size_t>(r.object)].cls);
    if (!a || !b || relation_validate(a->bbox, b->bbox, rules) != r.kind) s.relations = false;
  }
  return s;
}

ImageScore score_image(const TokenGrid& grid, const PromptSpec& spec, const RelationRuleset& rules,
                       int detect_min_area) {
  return score_report(detect(grid, detect_min_area), spec, rules);
}

const SubtaskResult* BenchResult::find(std::string_view name) const {
  for (const auto& s : subtasks)
    if (s.name == name) return &s;
  return nullptr;
}

BenchResult run_benchmark(const PolicyParams& policy, const ReasonerParams* reasoner,
                          std::span<const PromptSpec> suite, const BenchConfig& cfg,
                          const AliasTable& table, const SceneConfig& scene) {
  if (cfg.images_per_prompt < 1) throw ConfigError("bench.images_per_prompt must be at least 1");
  if (!(cfg.flip_prob >= 0.0 && cfg.flip_prob < 0.5)) throw ConfigError("bench.flip_prob must lie in [0, 0.5)");
  std::map<TemplateKind, SubtaskResult> acc;
  for (const auto& spec : suite) {
    const std::vector<int>* text = &spec.text;
    CandidateSet cands;
    if (reasoner) {
      cands = propose_rewrites(spec, table, TypicalityTable::standard(), scene);
      const auto choice = greedy_rewrite(*reasoner, candidate_features(spec, cands, table));
      text = &cands[static_cast<std::size_t>(choice.index)].spec.text;
    }
    SubtaskResult& r = acc[spec.kind];
    r.name = std::string(to_string(spec.kind));
    r.n_prompts++;
    for (int j = 0; j < cfg.images_per_prompt; ++j) {
      const std::uint64_t seed =
          derive_seed(cfg.seed, {static_cast<std::uint64_t>(spec.id), static_cast<std::uint64_t>(j)});
      TokenGrid g = decode(policy, *text, cfg.schedule, seed).grid;
      if (cfg.flip_prob > 0.0) g = apply_noise(g, {cfg.flip_prob, derive_seed(seed, {0x0B5ULL})});
      r.n_images++;
      r.passes += score_image(g, spec, cfg.rules, cfg.detect_min_area).pass();
    }
  }
  BenchResult out;
  for (auto& [kind, r] : acc) {
    r.pass_rate = static_cast<double>(r.passes) / r.n_images;
    out.subtasks.push_back(r);
  }
  if (!out.subtasks.empty()) {
    double sum = 0.0;
    for (const auto& s : out.subtasks) sum += s.pass_rate;
    out.overall = sum / static_cast<double>(out.subtasks.size());
  }
  return out;
}

CellStat summarize(std::span<const double> xs) {
  if (xs.empty()) return {};
  // shifted by the first value so that a constant series is reproduced exactly
  const double n = static_cast<double>(xs.size());
  const double x0 = xs.front();
  double shift = 0.0;
  for (double x : xs) shift += x - x0;
  shift /= n;
  double var = 0.0;
  for (double x : xs) var += (x - x0 - shift) * (x - x0 - shift);
  return {x0 + shift, std::sqrt(var / n)};
}

// ---------------------------------------------------------------------------

namespace {

std::string num(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

double to_double(const std::string& s) {
  try {
    std::size_t pos = 0;
    const double v = std::stod(s, &pos);
    if (pos != s.size()) throw DataError("trailing characters in number '" + s + "'");
    return v;
  } catch (const std::invalid_argument&) {
    throw DataError("not a number: '" + s + "'");
  } catch (const std::out_of_range&) {
    throw DataError("number out of range: '" + s + "'");
  }
}

int to_int(const std::string& s) { return static_cast<int>(to_double(s)); }

std::ofstream open_out(const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open '" + path + "' for writing");
  return os;
}

std::ifstream open_in(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open '" + path + "'");
  return is;
}

constexpr const char* kBenchColumns = "subtask,n_prompts,n_images,passes,pass_rate";

}  // namespace

void write_bench_csv(const std::string& path, const BenchResult& r) {
  auto os = open_out(path);
  os << kBenchColumns << '\n';
  for (const auto& s : r.subtasks)
    os << s.name << ',' << s.n_prompts << ',' << s.n_images << ',' << s.passes << ',' << num(s.pass_rate) << '\n';
  os << "overall,,,," << num(r.overall) << '\n';
}

BenchResult read_bench_csv(const std::string& path) {
  auto is = open_in(path);
  std::string line;
  if (!std::getline(is, line) || line != kBenchColumns) throw DataError("unexpected bench CSV header in '" + path + "'");
  BenchResult r;
  bool have_overall = false;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const auto c = split_csv(line);
    if (c.size() != 5) throw DataError("bench CSV row has " + std::to_string(c.size()) + " columns");
    if (c[0] == "overall") {
      r.overall = to_double(c[4]);
      have_overall = true;
      continue;
    }
    r.subtasks.push_back({c[0], to_int(c[1]), to_int(c[2]), to_int(c[3]), to_double(c[4])});
  }
  if (!have_overall) throw DataError("bench CSV lacks the overall row");
  return r;
}

void write_bench_json(const std::string& path, const BenchResult& r) {
  nlohmann::ordered_json j;
  j["subtasks"] = nlohmann::ordered_json::array();
  for (const auto& s : r.subtasks) {
    nlohmann::ordered_json sj;
    sj["subtask"] = s.name;
    sj["n_prompts"] = s.n_prompts;
    sj["n_images"] = s.n_images;
    sj["passes"] = s.passes;
    sj["pass_rate"] = s.pass_rate;
    j["subtasks"].push_back(sj);
  }
  j["overall"] = r.overall;
  auto os = open_out(path);
  os << j.dump(2) << '\n';
}

BenchResult read_bench_json(const std::string& path) {
  auto is = open_in(path);
  try {
    const auto j = nlohmann::json::parse(is);
    BenchResult r;
    for (const auto& sj : j.at("subtasks"))
      r.subtasks.push_back({sj.at("subtask").get<std::string>(), sj.at("n_prompts").get<int>(),
                            sj.at("n_images").get<int>(), sj.at("passes").get<int>(),
                            sj.at("pass_rate").get<double>()});
    r.overall = j.at("overall").get<double>();
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw DataError("malformed bench record '" + path + "': " + e.what());
  }
}

void write_ablation_csv(const std::string& path, const std::vector<AblationRow>& rows) {
  auto os = open_out(path);
  os << "r_r,r_p,r_o,n_seeds";
  if (!rows.empty())
    for (const auto& s : rows.front().subtasks) os << ',' << s << "_mean," << s << "_std";
  os << ",overall_mean,overall_std\n";
  for (const auto& r : rows) {
    os << r.toggles.r_r << ',' << r.toggles.r_p << ',' << r.toggles.r_o << ',' << r.n_seeds;
    for (const auto& c : r.rates) os << ',' << num(c.mean) << ',' << num(c.std);
    os << ',' << num(r.overall.mean) << ',' << num(r.overall.std) << '\n';
  }
}

std::vector<AblationRow> read_ablation_csv(const std::string& path) {
  auto is = open_in(path);
  std::string line;
  if (!std::getline(is, line)) throw DataError("empty ablation CSV '" + path + "'");
  const auto head = split_csv(line);
  if (head.size() < 6 || (head.size() - 6) % 2 != 0 || head[0] != "r_r")
    throw DataError("unexpected ablation CSV header");
  std::vector<std::string> subtasks;
  for (std::size_t k = 4; k + 2 < head.size(); k += 2) {
    const auto& h = head[k];
    subtasks.push_back(h.substr(0, h.size() - 5));  // strip "_mean"
  }
  std::vector<AblationRow> rows;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const auto c = split_csv(line);
    if (c.size() != head.size()) throw DataError("ablation CSV row width mismatch");
    AblationRow r;
    r.toggles = {c[0] == "1", c[1] == "1", c[2] == "1"};
    r.n_seeds = to_int(c[3]);
    r.subtasks = subtasks;
    for (std::size_t k = 0; k < subtasks.size(); ++k)
      r.rates.push_back({to_double(c[4 + 2 * k]), to_double(c[5 + 2 * k])});
    r.overall = {to_double(c[c.size() - 2]), to_double(c[c.size() - 1])};
    rows.push_back(std::move(r));
  }
  return rows;
}

void write_ablation_json(const std::string& path, const std::vector<AblationRow>& rows) {
  nlohmann::ordered_json j = nlohmann::ordered_json::array();
  for (const auto& r : rows) {
    nlohmann::ordered_json rj;
    rj["r_r"] = r.toggles.r_r;
    rj["r_p"] = r.toggles.r_p;
    rj["r_o"] = r.toggles.r_o;
    rj["n_seeds"] = r.n_seeds;
    rj["subtasks"] = nlohmann::ordered_json::array();
    for (std::size_t k = 0; k < r.subtasks.size(); ++k) {
      nlohmann::ordered_json sj;
      sj["subtask"] = r.subtasks[k];
      sj["mean"] = r.rates[k].mean;
      sj["std"] = r.rates[k].std;
      rj["subtasks"].push_back(sj);
    }
    rj["overall_mean"] = r.overall.mean;
    rj["overall_std"] = r.overall.std;
    rj["per_seed_overall"] = r.per_seed_overall;
    j.push_back(rj);
  }
  auto os = open_out(path);
  os << j.dump(2) << '\n';
}

std::vector<AblationRow> read_ablation_json(const std::string& path) {
  auto is = open_in(path);
  try {
    const auto j = nlohmann::json::parse(is);
    std::vector<AblationRow> rows;
    for (const auto& rj : j) {
      AblationRow r;
      r.toggles = {rj.at("r_r").get<bool>(), rj.at("r_p").get<bool>(), rj.at("r_o").get<bool>()};
      r.n_seeds = rj.at("n_seeds").get<int>();
      for (const auto& sj : rj.at("subtasks")) {
        r.subtasks.push_back(sj.at("subtask").get<std::string>());
        r.rates.push_back({sj.at("mean").get<double>(), sj.at("std").get<double>()});
      }
      r.overall = {rj.at("overall_mean").get<double>(), rj.at("overall_std").get<double>()};
      r.per_seed_overall = rj.at("per_seed_overall").get<std::vector<double>>();
      rows.push_back(std::move(r));
    }
    return rows;
  } catch (const nlohmann::json::exception& e) {
    throw DataError("malformed ablation record '" + path + "': " + e.what());
  }
}

}  // namespace viscog
