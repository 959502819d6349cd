#include "viscog/policy.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstring>
#include <numeric>
#include <sstream>
#include <utility>

namespace viscog {

PolicyParams::Offsets PolicyParams::layout(const PolicyHyper& hp) {
  const Eigen::Index d = hp.d_embed, h = hp.d_hidden, e = TokenVocab::n_emit;
  Offsets o;
  o.word = 0;
  o.pos = o.word + d * hp.n_words;
  o.tok = o.pos + d * hp.n_cells();
  o.w1 = o.tok + d * TokenVocab::size;
  o.b1 = o.w1 + h * 3 * d;
  o.w2 = o.b1 + h;
  o.b2 = o.w2 + h * h;
  o.w3 = o.b2 + h;
  o.b3 = o.w3 + e * h;
  o.end = o.b3 + e;
  return o;
}

PolicyParams::PolicyParams(const PolicyHyper& hp)
    : hp_(hp), off_(layout(hp)), theta_(Vector::Zero(off_.end)) {
  if (hp.d_embed <= 0 || hp.d_hidden <= 0 || hp.width <= 0 || hp.height <= 0 || hp.n_words <= 0)
    throw ConfigError("model: dimensions must be positive");
}

Eigen::Index PolicyParams::size_for(const PolicyHyper& hp) { return layout(hp).end; }

std::uint64_t PolicyParams::fingerprint() const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  const auto* bytes = reinterpret_cast<const unsigned char*>(theta_.data());
  for (std::size_t i = 0; i < static_cast<std::size_t>(theta_.size()) * sizeof(double); ++i) {
    h ^= bytes[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

PolicyParams init_params(const PolicyHyper& hp, std::uint64_t seed, double scale) {
  PolicyParams p(hp);
  if (scale == 0.0) return p;
  Rng rng(derive_seed(seed, {0x1417ULL}));
  const auto fill = [&](auto&& m, double sd) {
    for (Eigen::Index j = 0; j < m.cols(); ++j)
      for (Eigen::Index i = 0; i < m.rows(); ++i) m(i, j) = sd * rng.normal();
  };
  const double d = hp.d_embed, h = hp.d_hidden;
  fill(p.word_emb(), scale * 0.5);
  fill(p.pos_emb(), scale * 0.5);
  fill(p.tok_emb(), scale * 0.5);
  fill(p.w1(), scale / std::sqrt(3.0 * d) * 2.0);
  fill(p.w2(), scale / std::sqrt(h));
  fill(p.w3(), scale / std::sqrt(h));
  return p;
}

// ---------------------------------------------------------------------------

namespace {

Eigen::VectorXd prompt_embedding(const PolicyParams& params, std::span<const int> text, int* n_out) {
  const auto we = params.word_emb();
  Eigen::VectorXd v = Eigen::VectorXd::Zero(params.hyper().d_embed);
  int n = 0;
  for (int w : text) {
    if (w == words::pad) continue;
    if (w < 0 || w >= params.hyper().n_words)
      throw DataError("prompt word id " + std::to_string(w) + " outside the model vocabulary");
    v += we.col(w);
    ++n;
  }
  if (n > 0) v /= n;
  if (n_out) *n_out = n;
  return v;
}

constexpr int kNeighbourhood = 9;

// Token ids of the 3x3 neighbourhood of `cell`; uncommitted or out-of-grid
// cells read as background.
std::array<int, kNeighbourhood> neighbourhood(const TokenGrid& g, int cell) {
  std::array<int, kNeighbourhood> out{};
  const int x = cell % g.width, y = cell / g.width;
  int k = 0;
  for (int dy = -1; dy <= 1; ++dy)
    for (int dx = -1; dx <= 1; ++dx) {
      const int nx = x + dx, ny = y + dy;
      int t = TokenVocab::background;
      if (nx >= 0 && nx < g.width && ny >= 0 && ny < g.height) {
        t = g.at(nx, ny);
        if (t == TokenVocab::mask) t = TokenVocab::background;
      }
      out[static_cast<std::size_t>(k++)] = t;
    }
  return out;
}

void check_dims(const PolicyParams& params, const TokenGrid& g) {
  if (g.width != params.hyper().width || g.height != params.hyper().height)
    throw ContractError("grid is " + std::to_string(g.width) + "x" + std::to_string(g.height) +
                        " but the model expects " + std::to_string(params.hyper().width) + "x" +
                        std::to_string(params.hyper().height));
}

}  // namespace

PromptEncoding encode_prompt(const PolicyParams& params, std::span<const int> prompt_text) {
  const Eigen::Index d = params.hyper().d_embed;
  const auto w1 = params.w1();
  PromptEncoding enc;
  enc.prompt = prompt_embedding(params, prompt_text, &enc.n_words);
  enc.bias = w1.leftCols(d) * enc.prompt + params.b1();
  enc.pos_proj.noalias() = w1.middleCols(d, d) * params.pos_emb();
  enc.tok_proj.noalias() = (w1.rightCols(d) * params.tok_emb()) / kNeighbourhood;
  return enc;
}

CellDistributions forward(const PolicyParams& params, std::span<const int> prompt_text,
                          const TokenGrid& partial, std::vector<int> cells) {
  return forward(params, encode_prompt(params, prompt_text), partial, std::move(cells));
}

CellDistributions forward(const PolicyParams& params, const PromptEncoding& enc,
                          const TokenGrid& partial, std::vector<int> cells) {
  check_dims(params, partial);
  if (cells.empty()) {
    for (int c = 0; c < partial.size(); ++c)
      if (partial.cells[static_cast<std::size_t>(c)] == TokenVocab::mask) cells.push_back(c);
    if (cells.empty()) throw ContractError("forward: partial grid has no masked cells");
  }
  const auto m = static_cast<Eigen::Index>(cells.size());

  CellDistributions out;
  out.hidden1.resize(params.hyper().d_hidden, m);
  for (Eigen::Index j = 0; j < m; ++j) {
    const int cell = cells[static_cast<std::size_t>(j)];
    auto col = out.hidden1.col(j);
    col = enc.bias + enc.pos_proj.col(cell);
    for (int t : neighbourhood(partial, cell)) col += enc.tok_proj.col(t);
  }
  out.hidden1 = out.hidden1.array().tanh().matrix();
  out.hidden2.noalias() = params.w2() * out.hidden1;
  out.hidden2.colwise() += params.b2();
  out.hidden2 = out.hidden2.array().tanh().matrix();
  Eigen::MatrixXd logits(TokenVocab::n_emit, m);
  logits.noalias() = params.w3() * out.hidden2;
  logits.colwise() += params.b3();

  const double floor_log = std::log(kProbFloor);
  out.logprob.resize(logits.rows(), m);
  out.prob.resize(logits.rows(), m);
  for (Eigen::Index j = 0; j < m; ++j) {
    const double mx = logits.col(j).maxCoeff();
    const double lse = mx + std::log((logits.col(j).array() - mx).exp().sum());
    out.prob.col(j) = (logits.col(j).array() - lse).exp().matrix();
    out.logprob.col(j) = (logits.col(j).array() - lse).max(floor_log).matrix();
  }
  out.cells = std::move(cells);
  return out;
}

void backward(const PolicyParams& params, std::span<const int> prompt_text, const TokenGrid& partial,
              const CellDistributions& dist, const Eigen::MatrixXd& dlogprob, PolicyParams& grad) {
  backward(params, prompt_text, encode_prompt(params, prompt_text), partial, dist, dlogprob, grad);
}

void backward(const PolicyParams& params, std::span<const int> prompt_text, const PromptEncoding& enc,
              const TokenGrid& partial, const CellDistributions& dist,
              const Eigen::MatrixXd& dlogprob, PolicyParams& grad) {
  const Eigen::Index d = params.hyper().d_embed;
  const auto m = static_cast<Eigen::Index>(dist.cells.size());
  const double floor_log = std::log(kProbFloor);

  // floored entries are constant in the logits
  const Eigen::MatrixXd dl = (dist.logprob.array() > floor_log).select(dlogprob, 0.0);
  const Eigen::MatrixXd dz = dl - dist.prob * dl.colwise().sum().asDiagonal();

  grad.w3().noalias() += dz * dist.hidden2.transpose();
  grad.b3() += dz.rowwise().sum();
  const Eigen::MatrixXd da2 = ((params.w3().transpose() * dz).array() *
                               (1.0 - dist.hidden2.array().square())).matrix();
  grad.w2().noalias() += da2 * dist.hidden1.transpose();
  grad.b2() += da2.rowwise().sum();
  const Eigen::MatrixXd da1 = ((params.w2().transpose() * da2).array() *
                               (1.0 - dist.hidden1.array().square())).matrix();
  const Eigen::VectorXd da1_sum = da1.rowwise().sum();
  grad.b1() += da1_sum;

  // per-cell gathers: positional embedding and neighbourhood token sums
  Eigen::MatrixXd pos(d, m), ctx = Eigen::MatrixXd::Zero(d, m);
  std::vector<std::array<int, kNeighbourhood>> nbh(static_cast<std::size_t>(m));
  for (Eigen::Index j = 0; j < m; ++j) {
    const int cell = dist.cells[static_cast<std::size_t>(j)];
    pos.col(j) = params.pos_emb().col(cell);
    nbh[static_cast<std::size_t>(j)] = neighbourhood(partial, cell);
    for (int t : nbh[static_cast<std::size_t>(j)]) ctx.col(j) += params.tok_emb().col(t);
  }
  ctx /= kNeighbourhood;

  auto gw1 = grad.w1();
  gw1.leftCols(d).noalias() += da1_sum * enc.prompt.transpose();
  gw1.middleCols(d, d).noalias() += da1 * pos.transpose();
  gw1.rightCols(d).noalias() += da1 * ctx.transpose();

  const auto w1 = params.w1();
  if (enc.n_words > 0) {
    const Eigen::VectorXd dprompt = (w1.leftCols(d).transpose() * da1_sum) / enc.n_words;
    auto gwe = grad.word_emb();
    for (int w : prompt_text)
      if (w != words::pad) gwe.col(w) += dprompt;
  }
  const Eigen::MatrixXd dpos = w1.middleCols(d, d).transpose() * da1;
  const Eigen::MatrixXd dctx = (w1.rightCols(d).transpose() * da1) / kNeighbourhood;
  auto gpos = grad.pos_emb();
  auto gtok = grad.tok_emb();
  for (Eigen::Index j = 0; j < m; ++j) {
    gpos.col(dist.cells[static_cast<std::size_t>(j)]) += dpos.col(j);
    for (int t : nbh[static_cast<std::size_t>(j)]) gtok.col(t) += dctx.col(j);
  }
}

// ---------------------------------------------------------------------------

ClippedTerm clipped_term(double new_logprob, double old_logprob, double advantage, double epsilon) {
  const double r = std::exp(new_logprob - old_logprob);
  const double unclipped = r * advantage;
  const double clipped = std::clamp(r, 1.0 - epsilon, 1.0 + epsilon) * advantage;
  if (unclipped <= clipped) return {unclipped, r * advantage, false};
  return {clipped, 0.0, true};
}

SurrogateResult loss_and_grad(const PolicyParams& params, std::span<const SurrogateItem> batch,
                              double epsilon, double kl_coef) {
  if (!(epsilon > 0.0 && epsilon < 1.0)) throw ConfigError("epsilon must lie in (0, 1)");
  SurrogateResult res{0.0, PolicyParams(params.hyper()), 0.0, 0, {}};
  for (const auto& item : batch) res.n_cells += static_cast<int>(item.trace->token.size());
  if (res.n_cells == 0) return res;
  const double inv_n = 1.0 / res.n_cells;

  int n_clipped = 0;
  int cell_base = 0;
  for (const auto& item : batch) {
    const DecodeTrace& tr = *item.trace;
    const auto n = tr.token.size();
    if (item.old_logprob.size() != n || item.advantage.size() != n ||
        (kl_coef > 0.0 && item.ref_logprob.size() != n))
      throw ContractError("loss_and_grad: per-cell arrays do not match the trace");
    std::vector<double> ratio(n, 1.0);
    const PromptEncoding enc = encode_prompt(params, item.prompt_text);
    for (int k = 0; k < tr.n_steps(); ++k) {
      auto cells = tr.cells_at(k);
      if (cells.empty()) continue;
      const auto& snap = tr.snapshots[static_cast<std::size_t>(k)];
      CellDistributions dist = forward(params, enc, snap, cells);
      Eigen::MatrixXd dlp = Eigen::MatrixXd::Zero(dist.logprob.rows(), dist.logprob.cols());
      bool any = false;
      for (std::size_t j = 0; j < dist.cells.size(); ++j) {
        const int c = dist.cells[j];
        const auto cu = static_cast<std::size_t>(c);
        const int out = TokenVocab::output_of_token(tr.token[cu]);
        const double lp = dist.logprob(out, static_cast<Eigen::Index>(j));
        const ClippedTerm t = clipped_term(lp, item.old_logprob[cu], item.advantage[cu], epsilon);
        if (!std::isfinite(t.value) || !std::isfinite(t.dlogprob))
          throw NumericError("non-finite surrogate term at cell " + std::to_string(cell_base + c));
        ratio[cu] = std::exp(lp - item.old_logprob[cu]);
        res.loss -= t.value * inv_n;
        n_clipped += t.clipped;
        double g = -t.dlogprob;
        if (kl_coef > 0.0) {
          const double x = item.ref_logprob[cu] - lp;
          res.loss += kl_coef * (std::exp(x) - x - 1.0) * inv_n;
          g += kl_coef * (1.0 - std::exp(x));
        }
        if (g != 0.0) {
          dlp(out, static_cast<Eigen::Index>(j)) = g * inv_n;
          any = true;
        }
      }
      if (any) backward(params, item.prompt_text, enc, snap, dist, dlp, res.grad);
    }
    res.ratio.insert(res.ratio.end(), ratio.begin(), ratio.end());
    cell_base += static_cast<int>(n);
  }
  res.clip_frac = static_cast<double>(n_clipped) / res.n_cells;
  if (!res.grad.all_finite()) throw NumericError("non-finite gradient in clipped surrogate");
  return res;
}

namespace {

std::vector<Eigen::Index> probe_indices(Eigen::Index n, int n_probes, std::uint64_t seed,
                                        std::span<const Eigen::Index> fixed) {
  std::vector<Eigen::Index> idx(fixed.begin(), fixed.end());
  Rng rng(derive_seed(seed, {0x67ADULL}));
  const auto size = static_cast<std::uint64_t>(n);
  while (static_cast<int>(idx.size()) < n_probes + static_cast<int>(fixed.size()) && idx.size() < size) {
    const auto i = static_cast<Eigen::Index>(rng.below(size));
    if (std::find(idx.begin(), idx.end(), i) == idx.end()) idx.push_back(i);
  }
  return idx;
}

GradCheckEntry entry(Eigen::Index i, double analytic, double numeric, double step) {
  return {i, analytic, numeric, std::abs(analytic - numeric) / std::max(1e-8, std::abs(numeric)), step};
}

}  // namespace

GradCheckReport grad_check(const std::function<double(const Eigen::VectorXd&)>& loss,
                           const Eigen::VectorXd& theta, const Eigen::VectorXd& analytic,
                           int n_probes, std::uint64_t seed, double step,
                           std::span<const Eigen::Index> fixed) {
  GradCheckReport rep;
  Eigen::VectorXd probe = theta;
  for (Eigen::Index i : probe_indices(theta.size(), n_probes, seed, fixed)) {
    const double orig = probe(i);
    probe(i) = orig + step;
    const double up = loss(probe);
    probe(i) = orig - step;
    const double down = loss(probe);
    probe(i) = orig;
    rep.entries.push_back(entry(i, analytic(i), (up - down) / (2.0 * step), step));
    rep.max_rel_error = std::max(rep.max_rel_error, rep.entries.back().rel_error);
  }
  return rep;
}

GradCheckReport grad_check(const PolicyParams& params, std::span<const SurrogateItem> batch,
                           double epsilon, int n_probes, std::uint64_t seed, double step,
                           double kl_coef) {
  const auto analytic = loss_and_grad(params, batch, epsilon, kl_coef).grad.theta();
  PolicyParams scratch = params;
  // loss and the side of [1-eps, 1+eps] every ratio falls on
  const auto eval = [&](Eigen::Index i, double x) {
    scratch.theta()(i) = x;
    const auto r = loss_and_grad(scratch, batch, epsilon, kl_coef);
    std::vector<std::int8_t> side(r.ratio.size());
    for (std::size_t k = 0; k < side.size(); ++k)
      side[k] = r.ratio[k] > 1.0 + epsilon ? 1 : (r.ratio[k] < 1.0 - epsilon ? -1 : 0);
    return std::make_pair(r.loss, std::move(side));
  };
  GradCheckReport rep;
  for (Eigen::Index i : probe_indices(params.theta().size(), n_probes, seed, {})) {
    const double orig = params.theta()(i);
    // a ratio crossing a clip edge between the two evaluations puts a kink inside the
    // difference; shrink the step until both land on the same piece
    double h = step, numeric = 0.0;
    for (int tries = 0; tries < 4; ++tries) {
      const auto [up, up_side] = eval(i, orig + h);
      const auto [down, down_side] = eval(i, orig - h);
      numeric = (up - down) / (2.0 * h);
      if (up_side == down_side) break;
      if (tries < 3) h *= 0.1;
    }
    scratch.theta()(i) = orig;
    rep.entries.push_back(entry(i, analytic(i), numeric, h));
    rep.max_rel_error = std::max(rep.max_rel_error, rep.entries.back().rel_error);
  }
  return rep;
}

}  // namespace viscog
