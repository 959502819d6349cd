#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "viscog/grid.hpp"
#include "viscog/policy.hpp"
#include "viscog/reasoner.hpp"
#include "viscog/rewards.hpp"
#include "viscog/scene.hpp"

namespace viscog {

struct ImageScore {
  bool presence = false;   // every required class detected
  bool counts = false;     // every count exact
  bool colors = false;     // every colour constraint argmax-correct
  bool relations = false;  // every relation satisfied
  bool pass() const { return presence && counts && colors && relations; }
};

ImageScore score_image(const TokenGrid& grid, const PromptSpec& spec, const RelationRuleset& rules = {},
                       int detect_min_area = kDefaultDetectMinArea);
ImageScore score_report(const DetectorReport& report, const PromptSpec& spec, const RelationRuleset& rules = {});

struct SubtaskResult {
  std::string name;
  int n_prompts = 0;
  int n_images = 0;
  int passes = 0;
  double pass_rate = 0.0;
  friend bool operator==(const SubtaskResult&, const SubtaskResult&) = default;
};

struct BenchResult {
  std::vector<SubtaskResult> subtasks;  // template-kind order
  double overall = 0.0;                 // unweighted mean of subtask rates
  const SubtaskResult* find(std::string_view name) const;
};

struct BenchConfig {
  int images_per_prompt = 4;
  std::uint64_t seed = 2024;
  double flip_prob = 0.0;
  DecodeSchedule schedule;
  RelationRuleset rules;
  int detect_min_area = kDefaultDetectMinArea;
  int max_prompt_len = 16;
};

/// Decodes `images_per_prompt` images per prompt and scores each. With a
/// reasoner, every prompt is first replaced by its greedy rewrite; scoring
/// always uses the original ground truth.
BenchResult run_benchmark(const PolicyParams& policy, const ReasonerParams* reasoner,
                          std::span<const PromptSpec> suite, const BenchConfig& cfg,
                          const AliasTable& table = AliasTable::standard(),
                          const SceneConfig& scene = {});

// --- reward ablation -----------------------------------------------------------

struct CellStat {
  double mean = 0.0;
  double std = 0.0;
  friend bool operator==(const CellStat&, const CellStat&) = default;
};

struct AblationRow {
  RewardToggles toggles;
  int n_seeds = 0;
  std::vector<std::string> subtasks;
  std::vector<CellStat> rates;  // per subtask
  CellStat overall;
  std::vector<double> per_seed_overall;
  friend bool operator==(const AblationRow&, const AblationRow&) = default;
};

/// Population mean and std.
CellStat summarize(std::span<const double> xs);

// --- reports -------------------------------------------------------------------

/// Columns: subtask,n_prompts,n_images,passes,pass_rate; a final "overall" row
/// carries the unweighted mean in pass_rate.
void write_bench_csv(const std::string& path, const BenchResult& r);
BenchResult read_bench_csv(const std::string& path);
void write_bench_json(const std::string& path, const BenchResult& r);
BenchResult read_bench_json(const std::string& path);

/// Columns: r_r,r_p,r_o,n_seeds, then <subtask>_mean,<subtask>_std per
/// subtask, then overall_mean,overall_std.
void write_ablation_csv(const std::string& path, const std::vector<AblationRow>& rows);
std::vector<AblationRow> read_ablation_csv(const std::string& path);
void write_ablation_json(const std::string& path, const std::vector<AblationRow>& rows);
std::vector<AblationRow> read_ablation_json(const std::string& path);

}  // namespace viscog
