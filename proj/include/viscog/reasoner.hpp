#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "viscog/rng.hpp"
#include "viscog/scene.hpp"

namespace viscog {

enum class RewriteKind : std::uint8_t { identity, alias_substitute, add_layout_hint };
std::string_view to_string(RewriteKind k);

struct RewriteAction {
  RewriteKind kind = RewriteKind::identity;
  int candidate = -1;                 // index into resolve_alias output
  std::optional<RelationKind> hint;   // for add_layout_hint
  PromptSpec spec;                    // resulting prompt P'
};

using CandidateSet = std::vector<RewriteAction>;

/// Candidate features: identity flag, alias-substitution flag, alias phrase
/// match score, hint flag, hint relation one-hot (4), colour-constrained flag.
inline constexpr int kReasonerFeatures = 9;
inline constexpr int kMaxCandidates = 8;

struct ReasonerParams {
  Eigen::VectorXd w = Eigen::VectorXd::Zero(kReasonerFeatures);
  bool all_finite() const { return w.allFinite(); }
};

/// identity, then alias readings (true target first), then at most two layout
/// hints taken from the spec's relations.
CandidateSet propose_rewrites(const PromptSpec& spec, const AliasTable& table,
                              const TypicalityTable& typicality, const SceneConfig& cfg);

/// F x C feature matrix of a candidate set.
Eigen::MatrixXd candidate_features(const PromptSpec& original, const CandidateSet& candidates,
                                   const AliasTable& table);

/// Log-softmax of the feature-linear scores.
Eigen::VectorXd candidate_logprobs(const ReasonerParams& params, const Eigen::MatrixXd& features);

struct RewriteChoice {
  int index = 0;
  double logprob = 0.0;
};

RewriteChoice sample_rewrite(const ReasonerParams& params, const Eigen::MatrixXd& features, Rng& rng);
/// argmax, ties to the lowest index (so zero weights pick identity).
RewriteChoice greedy_rewrite(const ReasonerParams& params, const Eigen::MatrixXd& features);

struct ReasonerItem {
  int chosen = 0;
  double old_logprob = 0.0;
  double advantage = 0.0;
};

struct ReasonerLoss {
  double loss = 0.0;
  Eigen::VectorXd grad;
  double clip_frac = 0.0;
};

/// Clipped surrogate over the group's actions; all items share `features`.
ReasonerLoss reasoner_loss_and_grad(const ReasonerParams& params, const Eigen::MatrixXd& features,
                                    std::span<const ReasonerItem> items, double epsilon);

struct ReasonerUpdate {
  ReasonerParams params;
  ReasonerLoss stats;
  bool applied = false;  // false for zero-advantage groups
};

/// Normalises the R_r values into advantages and takes one gradient step.
ReasonerUpdate reasoner_update(const ReasonerParams& params, const Eigen::MatrixXd& features,
                               std::span<const int> chosen, std::span<const double> old_logprob,
                               std::span<const double> r_r, double epsilon, double lr);

}  // namespace viscog
