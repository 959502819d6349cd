#include <algorithm>
#include <cmath>
#include <numeric>

#include "viscog/policy.hpp"

namespace viscog {

double masked_cross_entropy(const PolicyParams& params, const PretrainExample& ex,
                            const std::vector<int>& masked_cells, PolicyParams* grad,
                            double grad_scale) {
  if (masked_cells.empty()) throw ContractError("masked_cross_entropy: empty mask");
  TokenGrid partial = ex.target;
  for (int c : masked_cells) partial.cells[static_cast<std::size_t>(c)] = TokenVocab::mask;
  const PromptEncoding enc = encode_prompt(params, ex.prompt_text);
  const CellDistributions dist = forward(params, enc, partial, masked_cells);
  const double inv_m = 1.0 / static_cast<double>(masked_cells.size());
  double loss = 0.0;
  Eigen::MatrixXd dlp;
  if (grad) dlp = Eigen::MatrixXd::Zero(dist.logprob.rows(), dist.logprob.cols());
  for (std::size_t j = 0; j < dist.cells.size(); ++j) {
    const int out = TokenVocab::output_of_token(ex.target.cells[static_cast<std::size_t>(dist.cells[j])]);
    loss -= dist.logprob(out, static_cast<Eigen::Index>(j)) * inv_m;
    if (grad) dlp(out, static_cast<Eigen::Index>(j)) = -inv_m * grad_scale;
  }
  if (grad) backward(params, ex.prompt_text, enc, partial, dist, dlp, *grad);
  return loss;
}

PretrainResult pretrain_teacher(PolicyParams init, std::span<const PretrainExample> data,
                                const PretrainConfig& cfg,
                                const std::function<void(int, double)>& on_step) {
  if (data.empty()) throw DataError("pretraining dataset is empty");
  if (cfg.steps < 0 || cfg.batch < 1) throw ConfigError("pretrain.steps/batch out of range");
  if (!(cfg.lr > 0.0)) throw ConfigError("pretrain.lr must be positive");
  if (!(cfg.mask_min > 0.0 && cfg.mask_min <= cfg.mask_max && cfg.mask_max <= 1.0))
    throw ConfigError("pretrain mask fractions must satisfy 0 < mask_min <= mask_max <= 1");

  PolicyParams params = std::move(init);
  const int n = params.hyper().n_cells();
  std::vector<int> order(static_cast<std::size_t>(n));
  Eigen::VectorXd m = Eigen::VectorXd::Zero(params.theta().size());
  Eigen::VectorXd v = Eigen::VectorXd::Zero(params.theta().size());
  std::vector<double> curve;
  curve.reserve(static_cast<std::size_t>(cfg.steps));

  for (int step = 0; step < cfg.steps; ++step) {
    Rng rng(derive_seed(cfg.seed, {0x9E7AULL, static_cast<std::uint64_t>(step)}));
    PolicyParams grad(params.hyper());
    double loss = 0.0;
    for (int b = 0; b < cfg.batch; ++b) {
      const auto& ex = data[static_cast<std::size_t>(rng.below(data.size()))];
      const double frac = rng.uniform(cfg.mask_min, cfg.mask_max);
      const int m = std::clamp(static_cast<int>(std::lround(frac * n)), 1, n);
      std::iota(order.begin(), order.end(), 0);
      rng.shuffle(std::span<int>(order));
      std::vector<int> cells(order.begin(), order.begin() + m);
      std::sort(cells.begin(), cells.end());
      loss += masked_cross_entropy(params, ex, cells, &grad, 1.0 / cfg.batch) / cfg.batch;
    }
    if (!std::isfinite(loss) || !grad.all_finite())
      throw PretrainDiverged("teacher pretraining diverged at step " + std::to_string(step),
                             params, step);
    if (cfg.optimizer == PretrainOptimizer::sgd) {
      params.theta() -= cfg.lr * grad.theta();
    } else {
      constexpr double b1 = 0.9, b2 = 0.999, eps = 1e-8;
      m = b1 * m + (1.0 - b1) * grad.theta();
      v = b2 * v + (1.0 - b2) * grad.theta().cwiseAbs2();
      const double c1 = 1.0 - std::pow(b1, step + 1), c2 = 1.0 - std::pow(b2, step + 1);
      params.theta().array() -= cfg.lr * (m.array() / c1) / ((v.array() / c2).sqrt() + eps);
    }
    curve.push_back(loss);
    if (on_step) on_step(step, loss);
  }
  return {TeacherParams(std::move(params), cfg.seed, cfg.steps), std::move(curve)};
}

std::vector<PretrainExample> make_pretrain_data(std::span<const PromptSpec> suite,
                                                const SceneConfig& cfg, int per_prompt,
                                                std::uint64_t seed) {
  std::vector<PretrainExample> out;
  for (const auto& spec : suite) {
    // alias phrases are left for the reasoning stage to resolve
    if (spec.alias_id) continue;
    for (int j = 0; j < per_prompt; ++j) {
      Rng rng(derive_seed(seed, {static_cast<std::uint64_t>(spec.id), static_cast<std::uint64_t>(j)}));
      out.push_back({spec.text, render_scene(sample_scene(spec, cfg, rng))});
    }
  }
  return out;
}

}  // namespace viscog
