#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "viscog/evalbench.hpp"
#include "viscog/policy.hpp"
#include "viscog/scene.hpp"
#include "viscog/trainer.hpp"

namespace viscog {

/// Every knob of a run. Sub-seeds are derived from `seed`, so a resolved
/// config reproduces the run exactly.
struct RunConfig {
  std::string run_id = "run";
  std::uint64_t seed = 0;
  SuiteConfig suite;
  BenchSuiteConfig bench_suite;
  PolicyHyper model;
  double init_scale = 1.0;
  PretrainConfig pretrain;
  int pretrain_per_prompt = 2;
  TrainConfig trainer;
  int checkpoint_every = 500;
  int eval_every = 250;
  BenchConfig bench;
  AblationSpec ablation;

  std::uint64_t suite_seed() const { return derive_seed(seed, {1}); }
  std::uint64_t bench_suite_seed() const { return derive_seed(seed, {2}); }
  std::uint64_t pretrain_data_seed() const { return derive_seed(seed, {4}); }
  std::uint64_t init_seed() const { return derive_seed(seed, {5}); }
};

RunConfig default_config();
/// Strict parse: unknown or mistyped fields raise ConfigError naming the field.
RunConfig parse_config(std::string_view json_text);
RunConfig load_config(const std::string& path);
/// Applies "a.b.c=value" overrides; the value is read as JSON when possible,
/// otherwise as a string.
RunConfig apply_overrides(const RunConfig& cfg, const std::vector<std::string>& sets);
/// Full config with every default expanded, stable field order.
std::string resolved_json(const RunConfig& cfg);
void write_resolved(const std::string& dir, const RunConfig& cfg);

}  // namespace viscog
