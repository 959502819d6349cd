#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "viscog/evalbench.hpp"
#include "viscog/grpo.hpp"
#include "viscog/policy.hpp"
#include "viscog/reasoner.hpp"
#include "viscog/rewards.hpp"
#include "viscog/scene.hpp"

namespace viscog {

struct TrainConfig {
  int group_size = 8;
  double epsilon = 0.2;
  double lr = 0.01;
  double reasoner_lr = 0.5;
  int steps = 2000;
  int inner_epochs = 1;
  double kl_coef = 0.0;  // penalty towards the teacher, off by default
  RewardToggles toggles;
  DecodeSchedule schedule;
  OutcomeConfig outcome;
  ProcessRewardConfig process;
  std::uint64_t seed = 0;
  int workers = 1;

  void validate(int n_cells) const;
};

struct MemberRollout {
  std::uint64_t seed = 0;
  int rewrite = 0;  // index into the candidate set (0 = identity)
  double rewrite_logprob = 0.0;
  PromptSpec rewritten;
  DecodeResult decoded;               // image from P', with trace
  std::optional<TokenGrid> original;  // image from P under the same seed
  RewardBreakdown rewards;
};

struct RolloutGroup {
  PromptSpec spec;
  CandidateSet candidates;
  Eigen::MatrixXd features;
  std::vector<MemberRollout> members;
};

/// Members are independent given their derived seeds; `cfg.workers` threads
/// split them without changing any result.
RolloutGroup sample_group(const PolicyParams& policy, const ReasonerParams& reasoner,
                          const TeacherParams* teacher, const PromptSpec& spec, const TrainConfig& cfg,
                          int step, const AliasTable& table = AliasTable::standard(),
                          const SceneConfig& scene = {});

struct StepMetrics {
  int step = 0;
  int prompt_id = 0;
  double loss = 0.0;
  double clip_frac = 0.0;
  double grad_norm = 0.0;
  RewardBreakdown mean;  // member means
  double reasoner_loss = 0.0;
  double canonical_rate = 0.0;  // share of members picking the true alias target
  std::optional<int> eval_snapshot;
};

std::string metrics_line(const StepMetrics& m);

struct TrainState {
  PolicyParams policy;
  ReasonerParams reasoner;
  int step = 0;
};

/// Prompt for `step`: round-robin over a shuffle redrawn every pass.
const PromptSpec& pick_prompt(std::span<const PromptSpec> suite, std::uint64_t seed, int step);

/// One GRPO step (generator and reasoner updates) at `state.step`; advances it.
StepMetrics train_step(TrainState& state, const TeacherParams* teacher, std::span<const PromptSpec> suite,
                       const TrainConfig& cfg, const AliasTable& table = AliasTable::standard(),
                       const SceneConfig& scene = {});

struct LoopConfig {
  std::string out_dir;  // empty: nothing written
  int checkpoint_every = 500;
  int eval_every = 250;  // 0 disables snapshots
  BenchConfig bench;
  std::vector<PromptSpec> bench_suite;
};

struct LoopResult {
  TrainState state;
  std::vector<StepMetrics> metrics;
};

/// Runs from `state.step` to cfg.steps. Resuming from a checkpoint written by
/// the loop continues the same trajectory.
LoopResult train_loop(TrainState state, const TeacherParams* teacher, std::span<const PromptSpec> suite,
                      const TrainConfig& cfg, const LoopConfig& loop,
                      const std::function<void(const StepMetrics&)>& on_step = {});

// --- reward ablation -----------------------------------------------------------

struct AblationSpec {
  std::vector<RewardToggles> rows;
  std::vector<std::uint64_t> seeds;
};

/// One training run per (row, seed) from the same initial state, each
/// evaluated on `bench_suite`.
std::vector<AblationRow> run_ablation(const TrainState& init, const TeacherParams* teacher,
                                      std::span<const PromptSpec> suite, const TrainConfig& base,
                                      const AblationSpec& spec, std::span<const PromptSpec> bench_suite,
                                      const BenchConfig& bench,
                                      const std::function<void(const std::string&)>& log = {});

}  // namespace viscog
