#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "viscog/policy.hpp"

using namespace viscog;

namespace {

std::vector<int> text_of(const std::string& prompt) {
  return parse_prompt(prompt, AliasTable::standard(), SceneConfig{}).text;
}

PolicyHyper one_cell() {
  PolicyHyper hp;
  hp.width = 1;
  hp.height = 1;
  return hp;
}

SurrogateItem item_for(const DecodeTrace& tr, std::vector<int> text, double advantage, double log_ratio = 0.0) {
  SurrogateItem it;
  it.prompt_text = std::move(text);
  it.trace = &tr;
  it.old_logprob = tr.logprob;
  for (double& x : it.old_logprob) x -= log_ratio;
  it.advantage.assign(tr.token.size(), advantage);
  return it;
}

}  // namespace

TEST(Forward, DistributionsAreNormalised) {
  const PolicyParams p = init_params(PolicyHyper{}, 3);
  TokenGrid partial(16, 16, TokenVocab::mask);
  for (int i = 0; i < 256; i += 3) partial.cells[static_cast<std::size_t>(i)] = TokenVocab::object(i % 8, 1);
  const auto d = forward(p, text_of("a red dog"), partial);
  EXPECT_EQ(d.cells.size(), 170u);
  for (Eigen::Index j = 0; j < d.prob.cols(); ++j) {
    EXPECT_NEAR(d.prob.col(j).sum(), 1.0, 1e-9);
    EXPECT_GE(d.logprob.col(j).minCoeff(), std::log(kProbFloor));
  }
  EXPECT_EQ(d.prob.rows(), TokenVocab::n_emit);
}

TEST(Forward, ZeroParamsGiveUniform) {
  const PolicyParams p = init_params(PolicyHyper{}, 3, 0.0);
  const auto d = forward(p, text_of("a red dog"), TokenGrid(16, 16, TokenVocab::mask));
  const double u = 1.0 / (TokenVocab::size - 1);
  EXPECT_NEAR(u, 1.0 / 65.0, 1e-15);
  EXPECT_NEAR(d.prob.maxCoeff(), u, 1e-15);
  EXPECT_NEAR(d.prob.minCoeff(), u, 1e-15);
}

TEST(Forward, ColorWordChangesDistributionsAfterTraining) {
  SuiteConfig sc;
  sc.n_prompts = 20;
  Rng rng(1);
  const auto suite = gen_training_suite(sc, rng);
  const auto data = make_pretrain_data(suite, sc.scene, 1, 2);
  PretrainConfig pc;
  pc.steps = 1;
  pc.batch = 2;
  const auto res = pretrain_teacher(init_params(PolicyHyper{}, 4), data, pc);
  const TokenGrid masked(16, 16, TokenVocab::mask);
  const auto a = forward(res.teacher.params(), text_of("a red dog"), masked);
  const auto b = forward(res.teacher.params(), text_of("a blue dog"), masked);
  EXPECT_GT((a.prob - b.prob).cwiseAbs().maxCoeff(), 1e-6);
}

TEST(Forward, FinalGridIsAContractViolation) {
  const PolicyParams p = init_params(PolicyHyper{}, 3);
  EXPECT_THROW(forward(p, text_of("a dog"), TokenGrid(16, 16)), ContractError);
}

TEST(Forward, UnknownWordIdIsADataError) {
  const PolicyParams p = init_params(PolicyHyper{}, 3);
  std::vector<int> bad = text_of("a dog");
  bad[3] = 999;
  EXPECT_THROW(forward(p, bad, TokenGrid(16, 16, TokenVocab::mask)), DataError);
}

TEST(Schedule, CosineTargets) {
  DecodeSchedule s;
  const auto t = s.committed_targets(256);
  ASSERT_EQ(t.size(), 8u);
  for (std::size_t k = 0; k < t.size(); ++k) {
    const double want = 256.0 * (1.0 - std::cos(M_PI / 2.0 * static_cast<double>(k + 1) / 8.0));
    EXPECT_EQ(t[k], static_cast<int>(std::floor(want + 1e-9)));
  }
  EXPECT_EQ(t.back(), 256);
  DecodeSchedule one{1, 1.0};
  EXPECT_EQ(one.committed_targets(256), std::vector<int>{256});
  DecodeSchedule many{40, 1.0};
  const auto m = many.committed_targets(64);
  for (std::size_t k = 1; k < m.size(); ++k) EXPECT_GT(m[k], m[k - 1]);
  EXPECT_THROW((DecodeSchedule{0, 1.0}.validate(256)), ConfigError);
  EXPECT_THROW((DecodeSchedule{300, 1.0}.validate(256)), ConfigError);
  EXPECT_THROW((DecodeSchedule{8, 0.0}.validate(256)), ConfigError);
}

TEST(Decode, SingleStepCommitsEverything) {
  const PolicyParams p = init_params(PolicyHyper{}, 3);
  const auto r = decode(p, text_of("a dog"), {1, 1.0}, 5);
  EXPECT_TRUE(r.grid.is_final());
  EXPECT_EQ(r.trace.cells_at(0).size(), 256u);
}

TEST(Decode, MaskCountStrictlyDecreasesAndTraceIsComplete) {
  const PolicyParams p = init_params(PolicyHyper{}, 3);
  const auto r = decode(p, text_of("two cups"), {}, 9);
  ASSERT_EQ(r.trace.n_steps(), 8);
  int prev = 257;
  for (const auto& snap : r.trace.snapshots) {
    const int m = snap.count(TokenVocab::mask);
    EXPECT_LT(m, prev);
    prev = m;
  }
  EXPECT_EQ(r.grid.count(TokenVocab::mask), 0);
  for (std::size_t c = 0; c < 256; ++c) {
    EXPECT_GE(r.trace.commit_step[c], 0);
    EXPECT_EQ(r.trace.token[c], r.grid.cells[c]);
    EXPECT_NEAR(std::exp(r.trace.logprob[c]), r.trace.confidence[c], 1e-12);
  }
}

TEST(Decode, DeterministicPerSeed) {
  const PolicyParams p = init_params(PolicyHyper{}, 3);
  const auto a = decode(p, text_of("a red dog"), {}, 42);
  const auto b = decode(p, text_of("a red dog"), {}, 42);
  const auto c = decode(p, text_of("a red dog"), {}, 43);
  EXPECT_EQ(a.grid, b.grid);
  EXPECT_EQ(a.trace.logprob, b.trace.logprob);
  EXPECT_EQ(a.trace.commit_step, b.trace.commit_step);
  EXPECT_NE(a.grid, c.grid);
}

TEST(TrajLogprob, RescoringReproducesStoredValues) {
  const PolicyParams p = init_params(PolicyHyper{}, 7);
  const auto text = text_of("a cat above a tree");
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto r = decode(p, text, {}, seed);
    const auto lp = traj_logprob(p, text, r.trace);
    for (std::size_t c = 0; c < lp.size(); ++c) {
      EXPECT_NEAR(lp[c], r.trace.logprob[c], 1e-9);
      EXPECT_NEAR(std::exp(lp[c] - r.trace.logprob[c]), 1.0, 1e-9);
    }
  }
}

TEST(TrajLogprob, MismatchedTraceIsAContractViolation) {
  const PolicyParams p = init_params(PolicyHyper{}, 7);
  auto r = decode(p, text_of("a dog"), {}, 1);
  auto bad = r.trace;
  bad.token.pop_back();
  EXPECT_THROW(traj_logprob(p, text_of("a dog"), bad), ContractError);
  bad = r.trace;
  bad.snapshots[1] = bad.snapshots.back();
  bad.snapshots[1].cells.assign(256, TokenVocab::background);
  EXPECT_THROW(traj_logprob(p, text_of("a dog"), bad), ContractError);
}

TEST(Surrogate, ClippedTermBranches) {
  const auto a = clipped_term(std::log(1.5), 0.0, 1.0, 0.2);
  EXPECT_NEAR(a.value, 1.2, 1e-12);
  EXPECT_EQ(a.dlogprob, 0.0);
  EXPECT_TRUE(a.clipped);
  const auto b = clipped_term(std::log(0.5), 0.0, -1.0, 0.2);
  EXPECT_NEAR(b.value, -0.8, 1e-12);
  EXPECT_TRUE(b.clipped);
  const auto c = clipped_term(std::log(0.5), 0.0, 1.0, 0.2);
  EXPECT_NEAR(c.value, 0.5, 1e-12);
  EXPECT_NEAR(c.dlogprob, 0.5, 1e-12);
  EXPECT_FALSE(c.clipped);
}

TEST(Surrogate, IdentityRatioLossIsMinusAdvantage) {
  const PolicyParams p = init_params(PolicyHyper{}, 2);
  const auto text = text_of("a dog");
  const auto r1 = decode(p, text, {}, 1), r2 = decode(p, text, {}, 2);
  const std::vector<SurrogateItem> batch = {item_for(r1.trace, text, 1.0), item_for(r2.trace, text, 1.0)};
  const auto res = loss_and_grad(p, batch, 0.2);
  EXPECT_NEAR(res.loss, -1.0, 1e-12);
  EXPECT_EQ(res.n_cells, 512);
  EXPECT_EQ(res.clip_frac, 0.0);
  for (double x : res.ratio) EXPECT_NEAR(x, 1.0, 1e-9);
}

TEST(Surrogate, SingleCellExamples) {
  const PolicyParams p = init_params(one_cell(), 5);
  const auto text = text_of("a dog");
  const auto r = decode(p, text, {1, 1.0}, 3);
  ASSERT_EQ(r.trace.token.size(), 1u);

  const std::vector<SurrogateItem> up = {item_for(r.trace, text, 1.0, std::log(1.5))};
  const auto a = loss_and_grad(p, up, 0.2);
  EXPECT_NEAR(a.loss, -1.2, 1e-12);
  EXPECT_EQ(a.grad.theta().cwiseAbs().maxCoeff(), 0.0);
  EXPECT_EQ(a.clip_frac, 1.0);

  const std::vector<SurrogateItem> down = {item_for(r.trace, text, -1.0, std::log(0.5))};
  const auto b = loss_and_grad(p, down, 0.2);
  EXPECT_NEAR(b.loss, 0.8, 1e-12);
  EXPECT_EQ(b.grad.theta().cwiseAbs().maxCoeff(), 0.0);
}

TEST(Surrogate, GradientStepRaisesTheSampledTokenLogprob) {
  PolicyParams p = init_params(one_cell(), 6);
  const auto text = text_of("a red cup");
  const auto r = decode(p, text, {1, 1.0}, 8);
  const std::vector<SurrogateItem> batch = {item_for(r.trace, text, 1.0)};
  const auto res = loss_and_grad(p, batch, 0.2);
  p.theta() -= 0.01 * res.grad.theta();
  EXPECT_GT(traj_logprob(p, text, r.trace)[0], r.trace.logprob[0]);
}

TEST(Surrogate, InvalidEpsilonIsAConfigError) {
  const PolicyParams p = init_params(one_cell(), 6);
  const auto r = decode(p, text_of("a dog"), {1, 1.0}, 8);
  const std::vector<SurrogateItem> batch = {item_for(r.trace, text_of("a dog"), 1.0)};
  EXPECT_THROW(loss_and_grad(p, batch, 0.0), ConfigError);
  EXPECT_THROW(loss_and_grad(p, batch, 1.0), ConfigError);
}

TEST(Surrogate, MismatchedArraysAreAContractViolation) {
  const PolicyParams p = init_params(one_cell(), 6);
  const auto r = decode(p, text_of("a dog"), {1, 1.0}, 8);
  auto it = item_for(r.trace, text_of("a dog"), 1.0);
  it.advantage.push_back(0.0);
  const std::vector<SurrogateItem> batch = {it};
  EXPECT_THROW(loss_and_grad(p, batch, 0.2), ContractError);
}

TEST(Property, LossIsInvariantUnderBatchPermutation) {
  const PolicyParams p = init_params(PolicyHyper{}, 12);
  std::vector<DecodeResult> runs;
  std::vector<std::vector<int>> texts = {text_of("a dog"), text_of("a red car"), text_of("three cups")};
  for (std::uint64_t s = 0; s < 3; ++s) runs.push_back(decode(p, texts[s], {}, s));
  std::vector<SurrogateItem> batch;
  for (std::size_t i = 0; i < 3; ++i) batch.push_back(item_for(runs[i].trace, texts[i], 0.5 - static_cast<double>(i), 0.1 * static_cast<double>(i)));
  const auto a = loss_and_grad(p, batch, 0.2);
  std::vector<SurrogateItem> perm = {batch[2], batch[0], batch[1]};
  const auto b = loss_and_grad(p, perm, 0.2);
  EXPECT_NEAR(a.loss, b.loss, 1e-12);
  EXPECT_LT((a.grad.theta() - b.grad.theta()).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(GradCheck, SurrogateMatchesFiniteDifferences) {
  const PolicyParams p = init_params(PolicyHyper{}, 21);
  // perturbed policy so that ratios differ from 1 and some cells clip
  PolicyParams q = p;
  Rng rng(4);
  for (Eigen::Index i = 0; i < q.theta().size(); ++i) q.theta()(i) += 0.05 * rng.normal();
  const auto t1 = text_of("a red dog left of a cat"), t2 = text_of("four apples");
  const auto r1 = decode(p, t1, {}, 1), r2 = decode(p, t2, {}, 2);
  std::vector<SurrogateItem> batch = {item_for(r1.trace, t1, 1.3), item_for(r2.trace, t2, -0.7)};
  const auto rep = grad_check(q, batch, 0.2, 200, 77);
  EXPECT_EQ(rep.entries.size(), 200u);
  EXPECT_LT(rep.max_rel_error, 1e-4);
  const auto res = loss_and_grad(q, batch, 0.2);
  EXPECT_GT(res.clip_frac, 0.0);
  EXPECT_LT(res.clip_frac, 1.0);
}

TEST(GradCheck, KlPenaltyMatchesFiniteDifferences) {
  const PolicyParams p = init_params(PolicyHyper{}, 22);
  PolicyParams ref = p;
  Rng rng(5);
  for (Eigen::Index i = 0; i < ref.theta().size(); ++i) ref.theta()(i) += 0.05 * rng.normal();
  const auto t = text_of("a blue boat");
  const auto r = decode(p, t, {}, 3);
  auto it = item_for(r.trace, t, 0.8);
  it.ref_logprob = traj_logprob(ref, t, r.trace);
  const std::vector<SurrogateItem> batch = {it};
  EXPECT_LT(grad_check(p, batch, 0.2, 200, 78, 1e-4, 0.5).max_rel_error, 1e-4);
}

TEST(GradCheck, ClippedBranchHasExactlyZeroError) {
  const PolicyParams p = init_params(one_cell(), 5);
  const auto text = text_of("a dog");
  const auto r = decode(p, text, {1, 1.0}, 3);
  const std::vector<SurrogateItem> batch = {item_for(r.trace, text, 1.0, std::log(1.5))};
  const auto rep = grad_check(p, batch, 0.2, 200, 1);
  EXPECT_EQ(rep.max_rel_error, 0.0);
  for (const auto& e : rep.entries) {
    EXPECT_EQ(e.analytic, 0.0);
    EXPECT_EQ(e.numeric, 0.0);
  }
}

TEST(GradCheck, StepShrinksWhenAProbeStraddlesTheClipEdge) {
  const PolicyParams p = init_params(one_cell(), 9);
  const auto text = text_of("a dog");
  const auto r = decode(p, text, {1, 1.0}, 4);
  // ratio a hair under 1 + eps: most probes push it across
  const std::vector<SurrogateItem> batch = {item_for(r.trace, text, 1.0, std::log(1.2) - 1e-7)};
  const auto rep = grad_check(p, batch, 0.2, 200, 2);
  EXPECT_LT(rep.max_rel_error, 1e-4);
  int shrunk = 0;
  for (const auto& e : rep.entries) shrunk += e.step < 1e-4;
  EXPECT_GT(shrunk, 0);

  // a fixed step sees the kink
  PolicyParams scratch = p;
  const auto loss = [&](const Eigen::VectorXd& t) {
    scratch.theta() = t;
    return loss_and_grad(scratch, batch, 0.2).loss;
  };
  const auto fixed = grad_check(loss, p.theta(), loss_and_grad(p, batch, 0.2).grad.theta(), 200, 2);
  EXPECT_GT(fixed.max_rel_error, 1e-4);
}

TEST(GradCheck, ReportsEveryProbedIndex) {
  Eigen::VectorXd theta = Eigen::VectorXd::LinSpaced(10, -1.0, 1.0);
  const auto f = [](const Eigen::VectorXd& t) { return t.squaredNorm(); };
  const Eigen::VectorXd g = 2.0 * theta;
  const std::vector<Eigen::Index> fixed = {3};
  const auto rep = grad_check(f, theta, g, 5, 1, 1e-4, fixed);
  ASSERT_EQ(rep.entries.size(), 6u);
  EXPECT_EQ(rep.entries[0].index, 3);
  EXPECT_LT(rep.max_rel_error, 1e-8);
  Eigen::VectorXd wrong = g;
  wrong(3) += 1.0;
  EXPECT_GT(grad_check(f, theta, wrong, 5, 1, 1e-4, fixed).max_rel_error, 0.1);
}

TEST(GradCheck, MaskedCrossEntropyMatchesFiniteDifferences) {
  SuiteConfig sc;
  sc.n_prompts = 5;
  Rng rng(3);
  const auto suite = gen_training_suite(sc, rng);
  const auto data = make_pretrain_data(suite, sc.scene, 1, 9);
  PolicyParams p = init_params(PolicyHyper{}, 30);
  std::vector<int> cells;
  for (int c = 0; c < 256; c += 2) cells.push_back(c);
  PolicyParams grad(p.hyper());
  masked_cross_entropy(p, data[0], cells, &grad);
  PolicyParams scratch = p;
  const auto loss = [&](const Eigen::VectorXd& th) {
    scratch.theta() = th;
    return masked_cross_entropy(scratch, data[0], cells);
  };
  EXPECT_LT(grad_check(loss, p.theta(), grad.theta(), 200, 5).max_rel_error, 1e-4);
}

TEST(Pretrain, BeatsTheUniformBaseline) {
  SuiteConfig sc;
  sc.n_prompts = 40;
  Rng rng(2);
  const auto suite = gen_training_suite(sc, rng);
  const auto data = make_pretrain_data(suite, sc.scene, 2, 3);
  PretrainConfig pc;
  pc.steps = 200;
  pc.batch = 4;
  const auto res = pretrain_teacher(init_params(PolicyHyper{}, 1), data, pc);
  ASSERT_EQ(res.loss_curve.size(), 200u);
  double tail = 0.0;
  for (std::size_t i = 180; i < 200; ++i) tail += res.loss_curve[i] / 20.0;
  EXPECT_LT(tail, std::log(65.0));
  EXPECT_LT(tail, res.loss_curve.front());
  EXPECT_EQ(res.teacher.steps(), 200);
}

TEST(Pretrain, PlainGradientDescentAlsoLearns) {
  SuiteConfig sc;
  sc.n_prompts = 40;
  Rng rng(2);
  const auto data = make_pretrain_data(gen_training_suite(sc, rng), sc.scene, 1, 3);
  PretrainConfig pc;
  pc.optimizer = PretrainOptimizer::sgd;
  pc.lr = 0.05;
  pc.steps = 100;
  pc.batch = 4;
  const auto res = pretrain_teacher(init_params(PolicyHyper{}, 1), data, pc);
  EXPECT_LT(res.loss_curve.back(), std::log(65.0));
}

TEST(Pretrain, DivergenceKeepsTheLastFiniteParameters) {
  SuiteConfig sc;
  sc.n_prompts = 10;
  Rng rng(2);
  const auto data = make_pretrain_data(gen_training_suite(sc, rng), sc.scene, 1, 3);
  PretrainConfig pc;
  pc.optimizer = PretrainOptimizer::sgd;
  pc.lr = 1e300;
  pc.steps = 20;
  pc.batch = 2;
  try {
    pretrain_teacher(init_params(PolicyHyper{}, 1), data, pc);
    FAIL() << "expected divergence";
  } catch (const PretrainDiverged& e) {
    EXPECT_TRUE(e.last_good().all_finite());
    EXPECT_GT(e.step(), 0);
  }
}

TEST(Pretrain, BadConfigIsRejected) {
  SuiteConfig sc;
  sc.n_prompts = 10;
  Rng rng(2);
  const auto data = make_pretrain_data(gen_training_suite(sc, rng), sc.scene, 1, 3);
  PretrainConfig pc;
  pc.mask_min = 0.0;
  EXPECT_THROW(pretrain_teacher(init_params(PolicyHyper{}, 1), data, pc), ConfigError);
  EXPECT_THROW(pretrain_teacher(init_params(PolicyHyper{}, 1), {}, PretrainConfig{}), DataError);
}

TEST(Teacher, FrozenParamsKeepTheirFingerprint) {
  const TeacherParams t(init_params(PolicyHyper{}, 9), 1, 0);
  const auto before = t.params().fingerprint();
  PolicyParams copy = t.params();
  copy.theta()(0) += 1.0;
  EXPECT_EQ(t.params().fingerprint(), before);
  EXPECT_NE(copy.fingerprint(), before);
}

TEST(Checkpoint, RoundTripIsBitExact) {
  const auto dir = std::filesystem::temp_directory_path() / "viscog_test_ckpt";
  std::filesystem::create_directories(dir);
  const std::string path = (dir / "a.ckpt").string();
  Checkpoint ck{init_params(PolicyHyper{}, 11), Eigen::VectorXd::LinSpaced(9, -0.3, 1.7),
                std::make_pair<std::uint64_t, int>(5, 100), 250};
  save_checkpoint(path, ck);
  const Checkpoint back = load_checkpoint(path, PolicyHyper{});
  EXPECT_EQ(back.policy.theta(), ck.policy.theta());
  ASSERT_TRUE(back.reasoner.has_value());
  EXPECT_EQ(*back.reasoner, *ck.reasoner);
  EXPECT_EQ(back.teacher_provenance, ck.teacher_provenance);
  EXPECT_EQ(back.step, 250);
  std::ifstream is(path, std::ios::binary);
  std::string head;
  std::getline(is, head);
  EXPECT_EQ(head, "viscoglab-ckpt v1");

  PolicyHyper other;
  other.d_hidden = 32;
  EXPECT_THROW(load_checkpoint(path, other), ConfigError);
  std::ofstream(dir / "bad.ckpt") << "not a checkpoint\n";
  EXPECT_THROW(load_checkpoint((dir / "bad.ckpt").string()), DataError);
  EXPECT_THROW(load_checkpoint((dir / "missing.ckpt").string()), IoError);
  std::filesystem::remove_all(dir);
}
