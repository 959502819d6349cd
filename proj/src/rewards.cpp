#include "viscog/rewards.hpp"

#include <algorithm>
#include <cmath>

#include "viscog/error.hpp"

namespace viscog {

void CountRewardConfig::validate() const {
  if (!(tau_scale > 0.0) || !std::isfinite(tau_scale))
    throw ConfigError("rewards.tau_scale must be positive");
}

std::vector<int> ProcessRewardConfig::resolve(int schedule_steps) const {
  validate(schedule_steps);
  if (steps.empty()) return {schedule_steps / 2};
  return steps;
}

void ProcessRewardConfig::validate(int schedule_steps) const {
  if (!(exponent >= 1.0) || !std::isfinite(exponent))
    throw ConfigError("rewards.process_exponent must be >= 1");
  if (steps.empty() && schedule_steps < 2)
    throw ConfigError("the process reward needs a schedule with at least 2 steps");
  for (int t : steps)
    if (t < 1 || t >= schedule_steps)
      throw ConfigError("rewards.process_steps entry " + std::to_string(t) + " outside 1.." +
                        std::to_string(schedule_steps - 1));
}

std::optional<RelationKind> relation_validate(const BBox& a, const BBox& b, const RelationRuleset& rules) {
  return relation_of(a, b, rules.margin);
}

double spatial_reward(const DetectorReport& report, const PromptSpec& spec, const RelationRuleset& rules) {
  if (spec.relations.empty()) return 1.0;
  int hits = 0;
  for (const auto& r : spec.relations) {
    const Detection* s = report.best_of(spec.objects[static_cast<std::size_t>(r.subject)].cls);
    const Detection* o = report.best_of(spec.objects[static_cast<std::size_t>(r.object)].cls);
    if (s && o && relation_validate(s->bbox, o->bbox, rules) == r.kind) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(spec.relations.size());
}

double counting_reward(const DetectorReport& report, const PromptSpec& spec, const CountRewardConfig& cfg) {
  cfg.validate();
  if (spec.objects.empty()) return 1.0;
  double sum = 0.0;
  for (const auto& o : spec.objects)
    sum += std::exp(-std::abs(report.count_class(o.cls) - o.count) / cfg.tau_scale);
  return sum / static_cast<double>(spec.objects.size());
}

double color_reward(const DetectorReport& report, const PromptSpec& spec) {
  int n = 0, hits = 0;
  for (const auto& o : spec.objects) {
    if (!o.color) continue;
    ++n;
    const Detection* d = report.best_of(o.cls);
    if (!d) continue;
    const auto best = std::max_element(d->color_hist.begin(), d->color_hist.end());
    if (static_cast<int>(best - d->color_hist.begin()) == *o.color) ++hits;
  }
  return n == 0 ? 1.0 : static_cast<double>(hits) / n;
}

double holistic_reward(const TokenGrid& grid, const DetectorReport& report, int max_objects) {
  const int nonbg = grid.size() - grid.count(TokenVocab::background);
  if (nonbg == 0) return 0.0;
  int covered = 0;
  for (const auto& d : report.detections) covered += d.cell_count;
  const auto n_det = static_cast<int>(report.detections.size());
  const double frag = n_det <= max_objects ? 1.0 : static_cast<double>(max_objects) / n_det;
  return static_cast<double>(covered) / nonbg * frag;
}

OutcomeResult outcome_reward(const TokenGrid& grid, const PromptSpec& spec, const OutcomeConfig& cfg,
                             std::uint64_t noise_seed) {
  OutcomeResult r;
  r.report = cfg.flip_prob > 0.0 ? detect(apply_noise(grid, {cfg.flip_prob, noise_seed}), cfg.detect_min_area)
                                 : detect(grid, cfg.detect_min_area);
  r.r_s = spatial_reward(r.report, spec, cfg.rules);
  r.r_n = counting_reward(r.report, spec, cfg.count);
  r.r_c = color_reward(r.report, spec);
  r.r_h = holistic_reward(grid, r.report, cfg.max_objects);
  r.r_o = r.r_s + r.r_n + r.r_c + r.r_h;
  return r;
}

double process_reward(std::span<const CellDistributions> policy, std::span<const CellDistributions> teacher,
                      const ProcessRewardConfig& cfg) {
  if (policy.size() != teacher.size() || policy.empty())
    throw ContractError("process_reward: policy and teacher step sets differ");
  if (!(cfg.exponent >= 1.0)) throw ConfigError("rewards.process_exponent must be >= 1");
  double sum = 0.0;
  for (std::size_t k = 0; k < policy.size(); ++k) {
    const auto& p = policy[k];
    const auto& t = teacher[k];
    if (p.cells != t.cells || p.cells.empty())
      throw ContractError("process_reward: masked regions differ");
    int diff = 0;
    for (Eigen::Index j = 0; j < p.prob.cols(); ++j) {
      Eigen::Index ap = 0, at = 0;
      p.prob.col(j).maxCoeff(&ap);
      t.prob.col(j).maxCoeff(&at);
      diff += ap != at;
    }
    const double d = static_cast<double>(diff) / static_cast<double>(p.cells.size());
    sum += std::exp(-std::pow(d, cfg.exponent));
  }
  return sum / static_cast<double>(policy.size());
}

double process_reward(const TokenGrid& policy_fill, const TokenGrid& teacher_fill,
                      const std::vector<int>& masked_region, double exponent) {
  const double d = grid_distance(policy_fill, teacher_fill, masked_region);
  return std::exp(-std::pow(d, exponent));
}

double reasoning_reward(double r_o_rewritten, double r_o_original, std::uint64_t seed_rewritten,
                        std::uint64_t seed_original) {
  if (seed_rewritten != seed_original)
    throw ContractError("reasoning_reward: paired decodes used different seeds");
  return r_o_rewritten - r_o_original;
}

double total_reward(const RewardBreakdown& b) {
  return (b.toggles.r_r ? b.r_r : 0.0) + (b.toggles.r_p ? b.r_p : 0.0) + (b.toggles.r_o ? b.r_o : 0.0);
}

}  // namespace viscog
