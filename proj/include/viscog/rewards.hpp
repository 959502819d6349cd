#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "viscog/grid.hpp"
#include "viscog/policy.hpp"
#include "viscog/scene.hpp"

namespace viscog {

struct CountRewardConfig {
  double tau_scale = 1.0;
  void validate() const;
};

struct ProcessRewardConfig {
  double exponent = 1.0;
  std::vector<int> steps;  // evaluation steps t_m; empty means {K/2}

  /// Effective evaluation steps for a K-step schedule; each must lie in 1..K-1.
  std::vector<int> resolve(int schedule_steps) const;
  void validate(int schedule_steps) const;
};

struct RelationRuleset {
  double margin = 1.0;
};

struct RewardToggles {
  bool r_r = true;
  bool r_p = true;
  bool r_o = true;
  friend bool operator==(const RewardToggles&, const RewardToggles&) = default;
};

struct RewardBreakdown {
  double r_s = 0.0, r_n = 0.0, r_c = 0.0, r_h = 0.0, r_o = 0.0;
  double r_p = 0.0, r_r = 0.0, total = 0.0;
  RewardToggles toggles;
};

/// Everything the outcome stage needs besides the grid and the spec.
struct OutcomeConfig {
  RelationRuleset rules;
  CountRewardConfig count;
  int max_objects = 4;
  int detect_min_area = kDefaultDetectMinArea;
  double flip_prob = 0.0;  // detector label noise
};

std::optional<RelationKind> relation_validate(const BBox& a, const BBox& b, const RelationRuleset& rules);

double spatial_reward(const DetectorReport& report, const PromptSpec& spec, const RelationRuleset& rules);
double counting_reward(const DetectorReport& report, const PromptSpec& spec, const CountRewardConfig& cfg);
double color_reward(const DetectorReport& report, const PromptSpec& spec);
double holistic_reward(const TokenGrid& grid, const DetectorReport& report, int max_objects);

struct OutcomeResult {
  double r_o = 0.0, r_s = 0.0, r_n = 0.0, r_c = 0.0, r_h = 0.0;
  DetectorReport report;
};

/// Detects once (after optional label noise keyed by `noise_seed`) and sums the
/// four outcome components.
OutcomeResult outcome_reward(const TokenGrid& grid, const PromptSpec& spec, const OutcomeConfig& cfg,
                             std::uint64_t noise_seed = 0);

/// exp(-d^p), d = share of cells whose argmax differs between the two
/// distribution sets, averaged over the supplied evaluation steps. Element k of
/// both spans must cover the same cells.
double process_reward(std::span<const CellDistributions> policy, std::span<const CellDistributions> teacher,
                      const ProcessRewardConfig& cfg);
/// Single-step form on already argmax-decoded grids.
double process_reward(const TokenGrid& policy_fill, const TokenGrid& teacher_fill,
                      const std::vector<int>& masked_region, double exponent);

/// r_o(P') - r_o(P); both images must come from the same decode seed.
double reasoning_reward(double r_o_rewritten, double r_o_original, std::uint64_t seed_rewritten,
                        std::uint64_t seed_original);

/// Sum of the enabled components.
double total_reward(const RewardBreakdown& b);

}  // namespace viscog
