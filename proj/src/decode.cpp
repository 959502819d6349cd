#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

#include "viscog/policy.hpp"

namespace viscog {

void DecodeSchedule::validate(int n_cells) const {
  if (steps < 1) throw ConfigError("schedule.steps must be at least 1");
  if (steps > n_cells) throw ConfigError("schedule.steps exceeds the number of cells");
  if (!(temperature > 0.0) || !std::isfinite(temperature))
    throw ConfigError("schedule.temperature must be positive");
}

std::vector<int> DecodeSchedule::committed_targets(int n_cells) const {
  validate(n_cells);
  std::vector<int> out(static_cast<std::size_t>(steps));
  int prev = 0;
  for (int k = 1; k <= steps; ++k) {
    const double frac = 1.0 - std::cos(0.5 * std::numbers::pi * k / steps);
    int n = static_cast<int>(std::floor(frac * n_cells + 1e-9));
    n = std::max(n, prev + 1);
    n = std::min(n, n_cells - (steps - k));
    if (k == steps) n = n_cells;
    out[static_cast<std::size_t>(k - 1)] = n;
    prev = n;
  }
  return out;
}

std::vector<int> DecodeTrace::cells_at(int step) const {
  std::vector<int> out;
  for (std::size_t c = 0; c < commit_step.size(); ++c)
    if (commit_step[c] == step) out.push_back(static_cast<int>(c));
  return out;
}

double DecodeTrace::total_logprob() const {
  return std::accumulate(logprob.begin(), logprob.end(), 0.0);
}

namespace {

int sample_column(const Eigen::MatrixXd& prob, Eigen::Index col, double temperature, Rng& rng) {
  const Eigen::Index n = prob.rows();
  double u = rng.uniform();
  if (temperature == 1.0) {
    for (Eigen::Index k = 0; k < n; ++k) {
      u -= prob(k, col);
      if (u < 0.0) return static_cast<int>(k);
    }
  } else {
    Eigen::ArrayXd w = prob.col(col).array().pow(1.0 / temperature);
    u *= w.sum();
    for (Eigen::Index k = 0; k < n; ++k) {
      u -= w(k);
      if (u < 0.0) return static_cast<int>(k);
    }
  }
  // rounding left some mass; take the last token with nonzero probability
  for (Eigen::Index k = n - 1; k > 0; --k)
    if (prob(k, col) > 0.0) return static_cast<int>(k);
  return 0;
}

}  // namespace

DecodeResult decode(const PolicyParams& params, std::span<const int> prompt_text,
                    const DecodeSchedule& schedule, std::uint64_t seed) {
  const PolicyHyper& hp = params.hyper();
  const int n = hp.n_cells();
  const auto targets = schedule.committed_targets(n);
  const PromptEncoding enc = encode_prompt(params, prompt_text);
  Rng rng(derive_seed(seed, {0xDEC0DEULL}));

  DecodeResult res;
  res.grid = TokenGrid(hp.width, hp.height, TokenVocab::mask);
  DecodeTrace& tr = res.trace;
  tr.width = hp.width;
  tr.height = hp.height;
  tr.seed = seed;
  tr.commit_step.assign(static_cast<std::size_t>(n), -1);
  tr.token.assign(static_cast<std::size_t>(n), TokenVocab::mask);
  tr.logprob.assign(static_cast<std::size_t>(n), 0.0);
  tr.confidence.assign(static_cast<std::size_t>(n), 0.0);

  // A masked cell's distribution depends only on its 3x3 neighbourhood, so
  // columns are recomputed only where a neighbour was committed.
  Eigen::MatrixXd prob(TokenVocab::n_emit, n), logprob(TokenVocab::n_emit, n);
  std::vector<char> dirty(static_cast<std::size_t>(n), 1);

  std::vector<int> sampled(static_cast<std::size_t>(n));
  std::vector<double> conf(static_cast<std::size_t>(n));
  std::vector<int> masked;
  int committed = 0;
  for (int k = 0; k < schedule.steps; ++k) {
    tr.snapshots.push_back(res.grid);
    masked.clear();
    std::vector<int> stale;
    for (int c = 0; c < n; ++c) {
      if (tr.commit_step[static_cast<std::size_t>(c)] >= 0) continue;
      masked.push_back(c);
      if (dirty[static_cast<std::size_t>(c)]) stale.push_back(c);
    }
    if (!stale.empty()) {
      const CellDistributions dist = forward(params, enc, res.grid, stale);
      for (std::size_t j = 0; j < stale.size(); ++j) {
        prob.col(stale[j]) = dist.prob.col(static_cast<Eigen::Index>(j));
        logprob.col(stale[j]) = dist.logprob.col(static_cast<Eigen::Index>(j));
        dirty[static_cast<std::size_t>(stale[j])] = 0;
      }
    }
    for (int c : masked) {
      const int out = sample_column(prob, c, schedule.temperature, rng);
      sampled[static_cast<std::size_t>(c)] = out;
      conf[static_cast<std::size_t>(c)] = prob(out, c);
    }
    const int take = targets[static_cast<std::size_t>(k)] - committed;
    std::partial_sort(masked.begin(), masked.begin() + take, masked.end(), [&](int a, int b) {
      const double ca = conf[static_cast<std::size_t>(a)], cb = conf[static_cast<std::size_t>(b)];
      return ca != cb ? ca > cb : a < b;
    });
    for (int i = 0; i < take; ++i) {
      const int c = masked[static_cast<std::size_t>(i)];
      const auto cu = static_cast<std::size_t>(c);
      const int out = sampled[cu];
      tr.commit_step[cu] = k;
      tr.token[cu] = TokenVocab::token_of_output(out);
      tr.logprob[cu] = logprob(out, c);
      tr.confidence[cu] = conf[cu];
      res.grid.cells[cu] = tr.token[cu];
      const int x = c % hp.width, y = c / hp.width;
      for (int dy = -1; dy <= 1; ++dy)
        for (int dx = -1; dx <= 1; ++dx) {
          const int nx = x + dx, ny = y + dy;
          if (nx >= 0 && nx < hp.width && ny >= 0 && ny < hp.height)
            dirty[static_cast<std::size_t>(ny * hp.width + nx)] = 1;
        }
    }
    committed += take;
  }
  return res;
}

std::vector<double> traj_logprob(const PolicyParams& params, std::span<const int> prompt_text,
                                 const DecodeTrace& trace) {
  const PolicyHyper& hp = params.hyper();
  if (trace.width != hp.width || trace.height != hp.height ||
      trace.commit_step.size() != static_cast<std::size_t>(hp.n_cells()) ||
      trace.token.size() != trace.commit_step.size())
    throw ContractError("traj_logprob: trace does not match the model dimensions");
  const PromptEncoding enc = encode_prompt(params, prompt_text);
  std::vector<double> out(trace.token.size(), 0.0);
  for (int k = 0; k < trace.n_steps(); ++k) {
    auto cells = trace.cells_at(k);
    if (cells.empty()) continue;
    const TokenGrid& snap = trace.snapshots[static_cast<std::size_t>(k)];
    for (int c : cells)
      if (snap.cells[static_cast<std::size_t>(c)] != TokenVocab::mask)
        throw ContractError("traj_logprob: cell " + std::to_string(c) +
                            " is not masked in the snapshot of its commit step");
    const CellDistributions dist = forward(params, enc, snap, cells);
    for (std::size_t j = 0; j < dist.cells.size(); ++j) {
      const auto c = static_cast<std::size_t>(dist.cells[j]);
      out[c] = dist.logprob(TokenVocab::output_of_token(trace.token[c]), static_cast<Eigen::Index>(j));
    }
  }
  return out;
}

TokenGrid argmax_fill(const PolicyParams& params, std::span<const int> prompt_text,
                      const TokenGrid& partial) {
  TokenGrid out = partial;
  if (partial.is_final()) return out;
  const CellDistributions dist = forward(params, prompt_text, partial);
  for (std::size_t j = 0; j < dist.cells.size(); ++j) {
    Eigen::Index best = 0;
    dist.prob.col(static_cast<Eigen::Index>(j)).maxCoeff(&best);
    out.cells[static_cast<std::size_t>(dist.cells[j])] = TokenVocab::token_of_output(static_cast<int>(best));
  }
  return out;
}

}  // namespace viscog
