#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "viscog/error.hpp"
#include "viscog/grid.hpp"
#include "viscog/rng.hpp"
#include "viscog/scene.hpp"

namespace viscog {

/// Architecture hyperparameters. Any mismatch makes checkpoints incompatible.
struct PolicyHyper {
  int n_words = words::vocab_size;
  int width = 16;
  int height = 16;
  int d_embed = 16;
  int d_hidden = 64;

  int n_cells() const { return width * height; }
  friend bool operator==(const PolicyHyper&, const PolicyHyper&) = default;
};

/// All trainable parameters of the masked-token generator, stored as one flat
/// vector in declaration order:
///   word_emb (d x n_words), pos_emb (d x N), tok_emb (d x |vocab|),
///   w1 (h x 3d), b1 (h), w2 (h x h), b2 (h), w3 (n_emit x h), b3 (n_emit).
/// The output head has no row for the mask token.
class PolicyParams {
 public:
  using Matrix = Eigen::MatrixXd;
  using Vector = Eigen::VectorXd;
  using MatMap = Eigen::Map<Matrix>;
  using CMatMap = Eigen::Map<const Matrix>;
  using VecMap = Eigen::Map<Vector>;
  using CVecMap = Eigen::Map<const Vector>;

  PolicyParams() : PolicyParams(PolicyHyper{}) {}
  explicit PolicyParams(const PolicyHyper& hp);

  static Eigen::Index size_for(const PolicyHyper& hp);

  const PolicyHyper& hyper() const { return hp_; }
  Vector& theta() { return theta_; }
  const Vector& theta() const { return theta_; }

  MatMap word_emb() { return mat(off_.word, hp_.d_embed, hp_.n_words); }
  MatMap pos_emb() { return mat(off_.pos, hp_.d_embed, hp_.n_cells()); }
  MatMap tok_emb() { return mat(off_.tok, hp_.d_embed, TokenVocab::size); }
  MatMap w1() { return mat(off_.w1, hp_.d_hidden, 3 * hp_.d_embed); }
  VecMap b1() { return vec(off_.b1, hp_.d_hidden); }
  MatMap w2() { return mat(off_.w2, hp_.d_hidden, hp_.d_hidden); }
  VecMap b2() { return vec(off_.b2, hp_.d_hidden); }
  MatMap w3() { return mat(off_.w3, TokenVocab::n_emit, hp_.d_hidden); }
  VecMap b3() { return vec(off_.b3, TokenVocab::n_emit); }

  CMatMap word_emb() const { return cmat(off_.word, hp_.d_embed, hp_.n_words); }
  CMatMap pos_emb() const { return cmat(off_.pos, hp_.d_embed, hp_.n_cells()); }
  CMatMap tok_emb() const { return cmat(off_.tok, hp_.d_embed, TokenVocab::size); }
  CMatMap w1() const { return cmat(off_.w1, hp_.d_hidden, 3 * hp_.d_embed); }
  CVecMap b1() const { return cvec(off_.b1, hp_.d_hidden); }
  CMatMap w2() const { return cmat(off_.w2, hp_.d_hidden, hp_.d_hidden); }
  CVecMap b2() const { return cvec(off_.b2, hp_.d_hidden); }
  CMatMap w3() const { return cmat(off_.w3, TokenVocab::n_emit, hp_.d_hidden); }
  CVecMap b3() const { return cvec(off_.b3, TokenVocab::n_emit); }

  bool all_finite() const { return theta_.allFinite(); }
  /// FNV-1a over the raw parameter bytes; used to assert immutability.
  std::uint64_t fingerprint() const;

 private:
  struct Offsets {
    Eigen::Index word = 0, pos = 0, tok = 0, w1 = 0, b1 = 0, w2 = 0, b2 = 0, w3 = 0, b3 = 0, end = 0;
  };
  static Offsets layout(const PolicyHyper& hp);

  MatMap mat(Eigen::Index off, Eigen::Index r, Eigen::Index c) { return MatMap(theta_.data() + off, r, c); }
  CMatMap cmat(Eigen::Index off, Eigen::Index r, Eigen::Index c) const { return CMatMap(theta_.data() + off, r, c); }
  VecMap vec(Eigen::Index off, Eigen::Index n) { return VecMap(theta_.data() + off, n); }
  CVecMap cvec(Eigen::Index off, Eigen::Index n) const { return CVecMap(theta_.data() + off, n); }

  PolicyHyper hp_;
  Offsets off_;
  Vector theta_;
};

/// Gaussian initialisation scaled by fan-in. `scale` = 0 gives all-zero
/// parameters (uniform output distribution).
PolicyParams init_params(const PolicyHyper& hp, std::uint64_t seed, double scale = 1.0);

/// Frozen supervised-pretrained generator that supplies the preferred
/// distribution for the process reward.
class TeacherParams {
 public:
  TeacherParams(PolicyParams params, std::uint64_t pretrain_seed, int steps)
      : params_(std::move(params)), seed_(pretrain_seed), steps_(steps) {}
  const PolicyParams& params() const { return params_; }
  std::uint64_t pretrain_seed() const { return seed_; }
  int steps() const { return steps_; }

 private:
  PolicyParams params_;
  std::uint64_t seed_;
  int steps_;
};

inline constexpr double kProbFloor = 1e-12;

/// Output of the network for a set of masked cells of one partial grid.
struct CellDistributions {
  std::vector<int> cells;
  Eigen::MatrixXd prob;     // n_emit x M, columns sum to 1
  Eigen::MatrixXd logprob;  // n_emit x M, floored at log(kProbFloor)
  // cached activations for backward
  Eigen::MatrixXd hidden1, hidden2;
};

/// First-layer terms that depend only on (params, prompt): the projected
/// prompt vector plus bias, projected positions (h x N) and projected token
/// embeddings scaled by the 1/9 neighbourhood mean (h x |vocab|).
struct PromptEncoding {
  Eigen::VectorXd prompt;  // mean word embedding
  int n_words = 0;
  Eigen::VectorXd bias;
  Eigen::MatrixXd pos_proj;
  Eigen::MatrixXd tok_proj;
};
PromptEncoding encode_prompt(const PolicyParams& params, std::span<const int> prompt_text);

/// Conditional token distributions of `cells` (all masked cells when empty)
/// given the prompt words and the committed cells of `partial`.
CellDistributions forward(const PolicyParams& params, std::span<const int> prompt_text,
                          const TokenGrid& partial, std::vector<int> cells = {});
CellDistributions forward(const PolicyParams& params, const PromptEncoding& enc,
                          const TokenGrid& partial, std::vector<int> cells = {});

/// Backpropagates d(loss)/d(logprob) (n_emit x M, same cell order as a
/// previous forward on the same inputs) into `grad`.
void backward(const PolicyParams& params, std::span<const int> prompt_text,
              const TokenGrid& partial, const CellDistributions& dist,
              const Eigen::MatrixXd& dlogprob, PolicyParams& grad);
void backward(const PolicyParams& params, std::span<const int> prompt_text,
              const PromptEncoding& enc, const TokenGrid& partial,
              const CellDistributions& dist, const Eigen::MatrixXd& dlogprob, PolicyParams& grad);

// ---------------------------------------------------------------------------
// iterative masked decoding

struct DecodeSchedule {
  int steps = 8;
  double temperature = 1.0;

  /// Cumulative committed-cell targets after each step, following the
  /// cosine masking curve: unmasked(k) = 1 - cos(pi/2 * k/K). Strictly
  /// increasing, ends at n_cells.
  std::vector<int> committed_targets(int n_cells) const;
  void validate(int n_cells) const;
};

struct DecodeTrace {
  int width = 0;
  int height = 0;
  std::uint64_t seed = 0;
  std::vector<int> commit_step;    // per cell, 0-based step index
  std::vector<int> token;          // per cell
  std::vector<double> logprob;     // per cell, under the sampling params
  std::vector<double> confidence;  // per cell, probability of the sampled token
  std::vector<TokenGrid> snapshots;  // per step, partial grid before sampling

  int n_steps() const { return static_cast<int>(snapshots.size()); }
  /// Cells committed at `step`, ascending.
  std::vector<int> cells_at(int step) const;
  double total_logprob() const;
};

struct DecodeResult {
  TokenGrid grid;
  DecodeTrace trace;
};

DecodeResult decode(const PolicyParams& params, std::span<const int> prompt_text,
                    const DecodeSchedule& schedule, std::uint64_t seed);

/// Re-scores the committed tokens of `trace` under `params`, per cell.
std::vector<double> traj_logprob(const PolicyParams& params, std::span<const int> prompt_text,
                                 const DecodeTrace& trace);

/// argmax-decoded grid of the masked cells of `partial` (G in the process
/// reward); committed cells are copied through.
TokenGrid argmax_fill(const PolicyParams& params, std::span<const int> prompt_text,
                      const TokenGrid& partial);

// ---------------------------------------------------------------------------
// clipped surrogate

struct SurrogateItem {
  std::vector<int> prompt_text;
  const DecodeTrace* trace = nullptr;
  std::vector<double> old_logprob;  // per cell
  std::vector<double> advantage;    // per cell
  std::vector<double> ref_logprob;  // per cell, reference model; only read when kl_coef > 0
};

struct SurrogateResult {
  double loss = 0.0;
  PolicyParams grad;
  double clip_frac = 0.0;  // share of cells on the constant clipped branch
  int n_cells = 0;
  std::vector<double> ratio;  // per committed cell, batch order
};

/// loss = -mean_cells min(r A, clip(r, 1-eps, 1+eps) A), r = exp(new - old),
/// plus kl_coef * mean_cells (exp(ref - new) - (ref - new) - 1) when kl_coef > 0.
SurrogateResult loss_and_grad(const PolicyParams& params, std::span<const SurrogateItem> batch,
                              double epsilon, double kl_coef = 0.0);

/// Scalar form of one cell's surrogate term and d(term)/d(new logprob).
struct ClippedTerm {
  double value;     // min(r A, clip(r) A)
  double dlogprob;  // derivative of value w.r.t. the new log-probability
  bool clipped;     // constant branch active
};
ClippedTerm clipped_term(double new_logprob, double old_logprob, double advantage, double epsilon);

struct GradCheckEntry {
  Eigen::Index index;
  double analytic;
  double numeric;
  double rel_error;
  double step;  // smaller than requested when the probe straddled a clip edge
};

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::vector<GradCheckEntry> entries;
};

/// Central finite differences on `n_probes` random coordinates.
GradCheckReport grad_check(const std::function<double(const Eigen::VectorXd&)>& loss,
                           const Eigen::VectorXd& theta, const Eigen::VectorXd& analytic,
                           int n_probes, std::uint64_t seed, double step = 1e-4,
                           std::span<const Eigen::Index> fixed = {});

/// Surrogate check; probes whose difference crosses a clip edge are retried with
/// up to three tenfold smaller steps.
GradCheckReport grad_check(const PolicyParams& params, std::span<const SurrogateItem> batch,
                           double epsilon, int n_probes, std::uint64_t seed, double step = 1e-4,
                           double kl_coef = 0.0);

// ---------------------------------------------------------------------------
// teacher pretraining

enum class PretrainOptimizer : std::uint8_t { sgd, adam };

struct PretrainConfig {
  PretrainOptimizer optimizer = PretrainOptimizer::adam;
  double lr = 0.005;
  int steps = 15000;
  int batch = 32;
  double mask_min = 0.2;
  double mask_max = 0.9;
  std::uint64_t seed = 1;
};

struct PretrainExample {
  std::vector<int> prompt_text;
  TokenGrid target;
};

struct PretrainResult {
  TeacherParams teacher;
  std::vector<double> loss_curve;  // mean masked-cell cross-entropy per step
};

/// Raised when pretraining produces a non-finite loss; carries the parameters
/// of the last finite step.
class PretrainDiverged : public NumericError {
 public:
  PretrainDiverged(const std::string& what, PolicyParams last_good, int step)
      : NumericError(what), last_good_(std::move(last_good)), step_(step) {}
  const PolicyParams& last_good() const { return last_good_; }
  int step() const { return step_; }

 private:
  PolicyParams last_good_;
  int step_;
};

/// Mean masked-cell cross-entropy of one example under a fixed mask.
double masked_cross_entropy(const PolicyParams& params, const PretrainExample& ex,
                            const std::vector<int>& masked_cells, PolicyParams* grad = nullptr,
                            double grad_scale = 1.0);

PretrainResult pretrain_teacher(PolicyParams init, std::span<const PretrainExample> data,
                                const PretrainConfig& cfg,
                                const std::function<void(int, double)>& on_step = {});

/// Oracle dataset: `per_prompt` rendered scenes for every prompt of `suite`.
std::vector<PretrainExample> make_pretrain_data(std::span<const PromptSpec> suite,
                                                const SceneConfig& cfg, int per_prompt,
                                                std::uint64_t seed);

// ---------------------------------------------------------------------------
// checkpoints

/// Reasoner weights travel in the same container as the generator.
struct Checkpoint {
  PolicyParams policy;
  std::optional<Eigen::VectorXd> reasoner;
  std::optional<std::pair<std::uint64_t, int>> teacher_provenance;  // seed, steps
  int step = 0;
};

void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
/// Throws ConfigError when `expect` is given and the stored architecture
/// differs.
Checkpoint load_checkpoint(const std::string& path,
                           const std::optional<PolicyHyper>& expect = std::nullopt);

}  // namespace viscog
