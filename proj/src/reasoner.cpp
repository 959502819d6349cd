#include "viscog/reasoner.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "viscog/error.hpp"
#include "viscog/grpo.hpp"
#include "viscog/policy.hpp"

namespace viscog {

std::vector<double> advantages(std::span<const double> rewards) {
  if (rewards.size() < 2) throw ContractError("advantages: group size must be at least 2");
  std::vector<double> out(rewards.size(), 0.0);
  const auto [lo, hi] = std::minmax_element(rewards.begin(), rewards.end());
  if (*lo == *hi) return out;
  const double n = static_cast<double>(rewards.size());
  const double mean = std::accumulate(rewards.begin(), rewards.end(), 0.0) / n;
  double var = 0.0;
  for (double r : rewards) var += (r - mean) * (r - mean);
  const double sd = std::sqrt(var / n);
  for (std::size_t i = 0; i < rewards.size(); ++i) out[i] = (rewards[i] - mean) / (sd + kStdGuard);
  return out;
}

std::string_view to_string(RewriteKind k) {
  switch (k) {
    case RewriteKind::identity: return "identity";
    case RewriteKind::alias_substitute: return "alias_substitute";
    case RewriteKind::add_layout_hint: return "add_layout_hint";
  }
  return "?";
}

CandidateSet propose_rewrites(const PromptSpec& spec, const AliasTable& table,
                              const TypicalityTable&, const SceneConfig& cfg) {
  CandidateSet out;
  out.push_back({RewriteKind::identity, -1, std::nullopt, spec});
  if (spec.alias_id) {
    const auto readings = resolve_alias(spec, table, cfg.n_distractors, cfg.max_prompt_len);
    for (std::size_t i = 0; i < readings.size(); ++i)
      out.push_back({RewriteKind::alias_substitute, static_cast<int>(i), std::nullopt, readings[i]});
  }
  int n_hints = 0;
  for (const auto& r : spec.relations) {
    if (n_hints == 2 || static_cast<int>(out.size()) == kMaxCandidates) break;
    if (std::find(spec.hints.begin(), spec.hints.end(), r.kind) != spec.hints.end()) continue;
    PromptSpec p = spec;
    p.hints.push_back(r.kind);
    p.text = render_text(p, table, cfg.max_prompt_len);
    out.push_back({RewriteKind::add_layout_hint, -1, r.kind, std::move(p)});
    ++n_hints;
  }
  return out;
}

namespace {

// share of the prompt's alias phrase words found in the phrase of the table
// entry naming the candidate's target
double phrase_match(const PromptSpec& original, const PromptSpec& cand, const AliasTable& table) {
  if (!original.alias_id || cand.objects.size() != 1) return 0.0;
  const auto& src = table.entries[static_cast<std::size_t>(*original.alias_id)].phrase;
  const auto target = table.find_target(cand.objects[0].cls, cand.objects[0].color);
  if (!target || src.empty()) return 0.0;
  const auto& tp = table.entries[static_cast<std::size_t>(*target)].phrase;
  int shared = 0;
  for (int w : src) shared += std::find(tp.begin(), tp.end(), w) != tp.end();
  return static_cast<double>(shared) / static_cast<double>(src.size());
}

}  // namespace

Eigen::MatrixXd candidate_features(const PromptSpec& original, const CandidateSet& candidates,
                                   const AliasTable& table) {
  Eigen::MatrixXd f = Eigen::MatrixXd::Zero(kReasonerFeatures, static_cast<Eigen::Index>(candidates.size()));
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    const auto& c = candidates[i];
    auto col = f.col(static_cast<Eigen::Index>(i));
    col(0) = c.kind == RewriteKind::identity;
    col(1) = c.kind == RewriteKind::alias_substitute;
    if (c.kind == RewriteKind::alias_substitute) col(2) = phrase_match(original, c.spec, table);
    col(3) = c.kind == RewriteKind::add_layout_hint;
    if (c.hint) col(4 + static_cast<int>(*c.hint)) = 1.0;
    col(8) = std::any_of(c.spec.objects.begin(), c.spec.objects.end(),
                         [](const RequiredObject& o) { return o.color.has_value(); });
  }
  return f;
}

Eigen::VectorXd candidate_logprobs(const ReasonerParams& params, const Eigen::MatrixXd& features) {
  if (features.cols() == 0) throw ContractError("reasoner: empty candidate set");
  if (features.rows() != params.w.size()) throw ContractError("reasoner: feature dimension mismatch");
  const Eigen::VectorXd s = features.transpose() * params.w;
  const double mx = s.maxCoeff();
  const double lse = mx + std::log((s.array() - mx).exp().sum());
  return (s.array() - lse).max(std::log(kProbFloor)).matrix();
}

RewriteChoice sample_rewrite(const ReasonerParams& params, const Eigen::MatrixXd& features, Rng& rng) {
  const Eigen::VectorXd lp = candidate_logprobs(params, features);
  double u = rng.uniform();
  Eigen::Index pick = lp.size() - 1;
  for (Eigen::Index i = 0; i < lp.size(); ++i) {
    u -= std::exp(lp(i));
    if (u < 0.0) {
      pick = i;
      break;
    }
  }
  return {static_cast<int>(pick), lp(pick)};
}

RewriteChoice greedy_rewrite(const ReasonerParams& params, const Eigen::MatrixXd& features) {
  const Eigen::VectorXd lp = candidate_logprobs(params, features);
  Eigen::Index best = 0;
  lp.maxCoeff(&best);
  return {static_cast<int>(best), lp(best)};
}

ReasonerLoss reasoner_loss_and_grad(const ReasonerParams& params, const Eigen::MatrixXd& features,
                                    std::span<const ReasonerItem> items, double epsilon) {
  if (!(epsilon > 0.0 && epsilon < 1.0)) throw ConfigError("epsilon must lie in (0, 1)");
  ReasonerLoss out{0.0, Eigen::VectorXd::Zero(params.w.size()), 0.0};
  if (items.empty()) return out;
  const Eigen::VectorXd lp = candidate_logprobs(params, features);
  const Eigen::VectorXd p = lp.array().exp().matrix();
  const Eigen::VectorXd mean_f = features * p;
  const double inv_n = 1.0 / static_cast<double>(items.size());
  int clipped = 0;
  for (const auto& it : items) {
    if (it.chosen < 0 || it.chosen >= features.cols()) throw ContractError("reasoner: chosen index out of range");
    const ClippedTerm t = clipped_term(lp(it.chosen), it.old_logprob, it.advantage, epsilon);
    out.loss -= t.value * inv_n;
    clipped += t.clipped;
    if (t.dlogprob != 0.0) out.grad -= t.dlogprob * inv_n * (features.col(it.chosen) - mean_f);
  }
  out.clip_frac = clipped * inv_n;
  if (!std::isfinite(out.loss) || !out.grad.allFinite())
    throw NumericError("non-finite reasoner surrogate");
  return out;
}

ReasonerUpdate reasoner_update(const ReasonerParams& params, const Eigen::MatrixXd& features,
                               std::span<const int> chosen, std::span<const double> old_logprob,
                               std::span<const double> r_r, double epsilon, double lr) {
  if (chosen.size() != r_r.size() || old_logprob.size() != r_r.size())
    throw ContractError("reasoner_update: group arrays differ in length");
  const auto adv = advantages(r_r);
  ReasonerUpdate up{params, {0.0, Eigen::VectorXd::Zero(params.w.size()), 0.0}, false};
  if (std::all_of(adv.begin(), adv.end(), [](double a) { return a == 0.0; })) return up;
  std::vector<ReasonerItem> items;
  for (std::size_t i = 0; i < adv.size(); ++i) items.push_back({chosen[i], old_logprob[i], adv[i]});
  up.stats = reasoner_loss_and_grad(params, features, items, epsilon);
  up.params.w -= lr * up.stats.grad;
  up.applied = true;
  return up;
}

}  // namespace viscog
