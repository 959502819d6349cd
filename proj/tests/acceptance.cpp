// Acceptance runner: one PASS/FAIL line per criterion.
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "viscog/config.hpp"
#include "viscog/evalbench.hpp"
#include "viscog/grpo.hpp"
#include "viscog/trainer.hpp"

using namespace viscog;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

// --- criterion 1: independent reward evaluators ------------------------------

std::optional<RelationKind> ref_relation(const BBox& a, const BBox& b, double margin) {
  const double dx = (b.x0 + b.x1) / 2.0 - (a.x0 + a.x1) / 2.0;
  const double dy = (b.y0 + b.y1) / 2.0 - (a.y0 + a.y1) / 2.0;
  if (std::fabs(dx) <= margin && std::fabs(dy) <= margin) return std::nullopt;
  if (std::fabs(dx) >= std::fabs(dy)) return dx > 0 ? RelationKind::left_of : RelationKind::right_of;
  return dy > 0 ? RelationKind::above : RelationKind::below;
}

int ref_largest(const DetectorReport& r, int cls) {
  int best = -1;
  for (std::size_t i = 0; i < r.detections.size(); ++i) {
    const auto& d = r.detections[i];
    if (d.cls != cls) continue;
    if (best < 0 || d.cell_count > r.detections[static_cast<std::size_t>(best)].cell_count) best = static_cast<int>(i);
  }
  return best;
}

double ref_spatial(const DetectorReport& r, const PromptSpec& s, double margin) {
  if (s.relations.empty()) return 1.0;
  double hits = 0.0;
  for (const auto& rel : s.relations) {
    const int a = ref_largest(r, s.objects[static_cast<std::size_t>(rel.subject)].cls);
    const int b = ref_largest(r, s.objects[static_cast<std::size_t>(rel.object)].cls);
    if (a < 0 || b < 0) continue;
    if (ref_relation(r.detections[static_cast<std::size_t>(a)].bbox, r.detections[static_cast<std::size_t>(b)].bbox,
                     margin) == rel.kind)
      hits += 1.0;
  }
  return hits / static_cast<double>(s.relations.size());
}

double ref_counting(const DetectorReport& r, const PromptSpec& s, double tau) {
  if (s.objects.empty()) return 1.0;
  double sum = 0.0;
  for (const auto& o : s.objects) {
    int n = 0;
    for (const auto& d : r.detections) n += d.cls == o.cls;
    sum += std::exp(-std::fabs(static_cast<double>(n - o.count)) / tau);
  }
  return sum / static_cast<double>(s.objects.size());
}

double ref_color(const DetectorReport& r, const PromptSpec& s) {
  int n = 0, hits = 0;
  for (const auto& o : s.objects) {
    if (!o.color) continue;
    ++n;
    const int i = ref_largest(r, o.cls);
    if (i < 0) continue;
    const auto& h = r.detections[static_cast<std::size_t>(i)].color_hist;
    int arg = 0;
    for (int c = 1; c < kNumColors; ++c)
      if (h[static_cast<std::size_t>(c)] > h[static_cast<std::size_t>(arg)]) arg = c;
    hits += arg == *o.color;
  }
  return n == 0 ? 1.0 : static_cast<double>(hits) / n;
}

int ref_argmax(const Eigen::MatrixXd& m, Eigen::Index col) {
  int arg = 0;
  for (Eigen::Index k = 1; k < m.rows(); ++k)
    if (m(k, col) > m(arg, col)) arg = static_cast<int>(k);
  return arg;
}

double ref_process(const std::vector<CellDistributions>& p, const std::vector<CellDistributions>& t, double expo) {
  double sum = 0.0;
  for (std::size_t k = 0; k < p.size(); ++k) {
    int diff = 0;
    for (Eigen::Index j = 0; j < p[k].prob.cols(); ++j) diff += ref_argmax(p[k].prob, j) != ref_argmax(t[k].prob, j);
    sum += std::exp(-std::pow(static_cast<double>(diff) / static_cast<double>(p[k].prob.cols()), expo));
  }
  return sum / static_cast<double>(p.size());
}

DetectorReport random_report(Rng& rng) {
  DetectorReport r;
  const int n = rng.between(0, 6);
  for (int i = 0; i < n; ++i) {
    Detection d;
    d.cls = rng.between(0, 3);
    const int x0 = rng.between(0, 13), y0 = rng.between(0, 13);
    d.bbox = {x0, y0, x0 + rng.between(0, 2), y0 + rng.between(0, 2)};
    d.cell_count = rng.between(1, d.bbox.area());
    int left = d.cell_count;
    for (int c = 0; c < kNumColors && left > 0; ++c) {
      const int take = c == kNumColors - 1 ? left : rng.between(0, left);
      d.color_hist[static_cast<std::size_t>(c)] = take;
      left -= take;
    }
    d.color = static_cast<int>(std::max_element(d.color_hist.begin(), d.color_hist.end()) - d.color_hist.begin());
    r.detections.push_back(d);
  }
  return r;
}

PromptSpec random_spec(Rng& rng) {
  PromptSpec s;
  const int n = rng.between(1, 3);
  for (int i = 0; i < n; ++i) {
    RequiredObject o;
    o.cls = rng.between(0, 3);
    o.count = rng.between(1, 4);
    if (rng.bernoulli(0.6)) o.color = rng.between(0, kNumColors - 1);
    s.objects.push_back(o);
  }
  const int nr = n < 2 ? 0 : rng.between(0, 2);
  for (int i = 0; i < nr; ++i)
    s.relations.push_back({0, rng.between(1, n - 1), static_cast<RelationKind>(rng.below(4))});
  return s;
}

CellDistributions random_dist(Rng& rng, int cells, int vocab) {
  CellDistributions d;
  d.prob.resize(vocab, cells);
  for (int j = 0; j < cells; ++j) {
    d.cells.push_back(j);
    for (int k = 0; k < vocab; ++k) d.prob(k, j) = rng.uniform();
    d.prob.col(j) /= d.prob.col(j).sum();
  }
  return d;
}

Outcome criterion1() {
  Rng rng(101);
  double worst = 0.0;
  const auto track = [&](double a, double b) { worst = std::max(worst, std::fabs(a - b)); };
  for (int i = 0; i < 1000; ++i) {
    const DetectorReport r = random_report(rng);
    const PromptSpec s = random_spec(rng);
    const double margin = rng.between(0, 2);
    const double tau = 0.25 + 2.0 * rng.uniform();
    track(spatial_reward(r, s, {margin}), ref_spatial(r, s, margin));
    track(counting_reward(r, s, {tau}), ref_counting(r, s, tau));
    track(color_reward(r, s), ref_color(r, s));

    const int steps = rng.between(1, 3), cells = rng.between(1, 20);
    const int vocab = rng.between(2, 5);
    std::vector<CellDistributions> p, t;
    for (int k = 0; k < steps; ++k) {
      p.push_back(random_dist(rng, cells, vocab));
      t.push_back(rng.bernoulli(0.3) ? p.back() : random_dist(rng, cells, vocab));
    }
    ProcessRewardConfig pc;
    pc.exponent = 1.0 + 2.0 * rng.uniform();
    track(process_reward(p, t, pc), ref_process(p, t, pc.exponent));

    const double a = 4.0 * rng.uniform(), b = 4.0 * rng.uniform();
    const std::uint64_t seed = rng.next();
    track(reasoning_reward(a, b, seed, seed), a - b);
  }
  return {worst <= 1e-12, "max abs deviation " + std::to_string(worst) + " over 1000 inputs per reward"};
}

// --- criterion 2: gradient checks ------------------------------------------

PromptSpec prompt(std::string_view text) { return parse_prompt(text, AliasTable::standard(), SceneConfig{}); }

Outcome criterion2() {
  BenchSuiteConfig bc;
  Rng srng(7);
  const auto suite = gen_benchmark_suite(bc, srng);
  Rng rng(202);
  double worst_gen = 0.0, worst_rea = 0.0;
  int shrunk = 0;
  for (int b = 0; b < 20; ++b) {
    const PolicyParams sampler = init_params(PolicyHyper{}, 300 + static_cast<std::uint64_t>(b));
    PolicyParams current = sampler;
    for (Eigen::Index i = 0; i < current.theta().size(); ++i) current.theta()(i) += 0.03 * rng.normal();
    std::vector<DecodeResult> runs;
    std::vector<std::vector<int>> texts;
    for (int m = 0; m < 2; ++m) {
      texts.push_back(suite[rng.below(suite.size())].text);
      runs.push_back(decode(sampler, texts.back(), {4, 1.0}, rng.next()));
    }
    std::vector<SurrogateItem> items;
    for (int m = 0; m < 2; ++m) {
      SurrogateItem it;
      it.prompt_text = texts[static_cast<std::size_t>(m)];
      it.trace = &runs[static_cast<std::size_t>(m)].trace;
      it.old_logprob = runs[static_cast<std::size_t>(m)].trace.logprob;
      it.advantage.assign(it.old_logprob.size(), rng.normal());
      items.push_back(std::move(it));
    }
    const auto rep = grad_check(current, items, 0.2, 200, rng.next());
    worst_gen = std::max(worst_gen, rep.max_rel_error);
    for (const auto& e : rep.entries) shrunk += e.step < 1e-4;

    const auto spec = prompt(b % 2 ? "a barking pet" : "fire-engine vehicle");
    const auto cands = propose_rewrites(spec, AliasTable::standard(), TypicalityTable::standard(), SceneConfig{});
    const auto f = candidate_features(spec, cands, AliasTable::standard());
    ReasonerParams cur, old;
    for (Eigen::Index i = 0; i < cur.w.size(); ++i) {
      cur.w(i) = 0.5 * rng.normal();
      old.w(i) = cur.w(i) + 0.2 * rng.normal();
    }
    const auto old_lp = candidate_logprobs(old, f);
    std::vector<ReasonerItem> ritems;
    for (int m = 0; m < 8; ++m) {
      const int c = static_cast<int>(rng.below(static_cast<std::uint64_t>(f.cols())));
      ritems.push_back({c, old_lp(c), rng.normal()});
    }
    const auto res = reasoner_loss_and_grad(cur, f, ritems, 0.2);
    const auto loss = [&](const Eigen::VectorXd& w) {
      ReasonerParams q;
      q.w = w;
      return reasoner_loss_and_grad(q, f, ritems, 0.2).loss;
    };
    // the reasoner has only nine weights; probe every one of them
    std::vector<Eigen::Index> all(kReasonerFeatures);
    for (int i = 0; i < kReasonerFeatures; ++i) all[static_cast<std::size_t>(i)] = i;
    worst_rea = std::max(worst_rea, grad_check(loss, cur.w, res.grad, 0, rng.next(), 1e-6, all).max_rel_error);
  }
  std::ostringstream d;
  d << "generator max rel error " << worst_gen << ", reasoner " << worst_rea << " (20 batches, 200 probes; "
    << shrunk << " generator probes retried with a smaller step across a clip edge)";
  return {worst_gen < 1e-4 && worst_rea < 1e-4, d.str()};
}

// --- criterion 3: GRPO mechanics -------------------------------------------

Outcome criterion3(const TeacherParams& teacher) {
  bool ok = true;
  std::ostringstream d;
  const auto a = advantages(std::vector<double>{1.0, 2.0, 3.0});
  const bool adv_ok = std::fabs(a[0] + 1.224744) < 1e-6 && a[1] == 0.0 && std::fabs(a[2] - 1.224744) < 1e-6;
  ok &= adv_ok;
  d << "advantages " << a[0] << "," << a[1] << "," << a[2];

  // zero-variance groups: the generator sees constant rewards when every toggle is off,
  // the reasoner sees constant R_r when all members pick the same rewrite
  TrainConfig cfg;
  cfg.group_size = 4;
  cfg.toggles = {false, false, false};
  SuiteConfig sc;
  sc.n_prompts = 10;
  Rng rng(3);
  const auto suite = gen_training_suite(sc, rng);
  TrainState st{teacher.params(), ReasonerParams{}, 0};
  for (int i = 0; i < 3; ++i) train_step(st, &teacher, suite, cfg);
  const bool gen_noop = st.policy.theta() == teacher.params().theta();
  const auto spec = prompt("a barking pet");
  const auto cands = propose_rewrites(spec, AliasTable::standard(), TypicalityTable::standard(), SceneConfig{});
  const auto f = candidate_features(spec, cands, AliasTable::standard());
  const ReasonerParams r0;
  const auto up = reasoner_update(r0, f, std::vector<int>{1, 1, 1, 1}, std::vector<double>(4, -std::log(5.0)),
                                  std::vector<double>(4, 0.7), 0.2, 0.5);
  const bool rea_noop = !up.applied && up.params.w == r0.w;
  ok &= gen_noop && rea_noop;
  d << "; zero-variance no-op generator " << gen_noop << " reasoner " << rea_noop;

  double worst = 0.0;
  cfg.toggles = {};
  for (int s = 0; s < 5; ++s) {
    const auto g = sample_group(teacher.params(), ReasonerParams{}, &teacher, suite[static_cast<std::size_t>(s)], cfg, s);
    std::vector<SurrogateItem> items;
    for (const auto& m : g.members) {
      SurrogateItem it;
      it.prompt_text = m.rewritten.text;
      it.trace = &m.decoded.trace;
      it.old_logprob = m.decoded.trace.logprob;
      it.advantage.assign(it.old_logprob.size(), 1.0);
      items.push_back(std::move(it));
    }
    for (double r : loss_and_grad(teacher.params(), items, cfg.epsilon).ratio) worst = std::max(worst, std::fabs(r - 1.0));
  }
  ok &= worst <= 1e-9;
  d << "; max |ratio-1| " << worst;
  return {ok, d.str()};
}

// --- criterion 4: closed loop ------------------------------------------------

Outcome criterion4() {
  Rng rng(404);
  const auto& kinds = BenchSuiteConfig::default_counts();
  const AliasTable table = AliasTable::standard();
  const TypicalityTable typ = TypicalityTable::standard();
  const SceneConfig scene;
  int passes = 0, exact = 0;
  for (int i = 0; i < 500; ++i) {
    auto it = kinds.begin();
    std::advance(it, static_cast<long>(rng.below(kinds.size())));
    const PromptSpec spec = gen_prompt(it->first, i, 2, 4, scene, table, typ, rng);
    const TokenGrid g = render_scene(sample_scene(spec, scene, rng));
    passes += score_image(g, spec).pass();
    exact += outcome_reward(g, spec, OutcomeConfig{}).r_o == 4.0;
  }
  return {passes == 500 && exact == 500,
          std::to_string(passes) + "/500 pass, " + std::to_string(exact) + "/500 with outcome reward 4.0"};
}

// --- criteria 5 and 6: training effectiveness --------------------------------

struct TrainingStudy {
  double init_overall = 0.0;
  std::vector<double> full, outcome_only;
  std::vector<double> alias_with, alias_without;
};

TrainingStudy run_study(const TeacherParams& teacher, int steps, int n_seeds) {
  const RunConfig rc = default_config();
  Rng srng(rc.suite_seed());
  const auto suite = gen_training_suite(rc.suite, srng);
  Rng brng(rc.bench_suite_seed());
  const auto bench = gen_benchmark_suite(rc.bench_suite, brng);

  TrainConfig cfg = rc.trainer;
  cfg.steps = steps;
  cfg.lr = 0.05;
  cfg.inner_epochs = 2;

  TrainingStudy s;
  const ReasonerParams zero;
  s.init_overall = run_benchmark(teacher.params(), &zero, bench, rc.bench).overall;
  std::cerr << "init overall " << s.init_overall << std::endl;
  for (int seed = 1; seed <= n_seeds; ++seed) {
    for (const bool full : {true, false}) {
      const auto t0 = Clock::now();
      TrainConfig c = cfg;
      c.seed = static_cast<std::uint64_t>(seed);
      c.toggles = full ? RewardToggles{true, true, true} : RewardToggles{false, false, true};
      const auto res = train_loop({teacher.params(), ReasonerParams{}, 0}, &teacher, suite, c, LoopConfig{});
      const auto br = run_benchmark(res.state.policy, &res.state.reasoner, bench, rc.bench);
      (full ? s.full : s.outcome_only).push_back(br.overall);
      if (full) {
        std::vector<PromptSpec> alias;
        for (const auto& p : bench)
          if (p.kind == TemplateKind::reasoning_alias) alias.push_back(p);
        s.alias_with.push_back(br.find("reasoning_alias")->pass_rate);
        s.alias_without.push_back(run_benchmark(res.state.policy, nullptr, alias, rc.bench).overall);
      }
      std::cerr << (full ? "full" : "outcome-only") << " seed " << seed << " overall " << br.overall << " ("
                << seconds_since(t0) << " s)" << std::endl;
    }
  }
  return s;
}

double mean(const std::vector<double>& xs) {
  double s = 0.0;
  for (double x : xs) s += x;
  return xs.empty() ? 0.0 : s / static_cast<double>(xs.size());
}

Outcome criterion5(const TrainingStudy& s) {
  const double gain = mean(s.full) - s.init_overall;
  std::ostringstream d;
  d << "init " << s.init_overall << ", full mean " << mean(s.full) << " (gain " << 100.0 * gain
    << " pp), outcome-only mean " << mean(s.outcome_only);
  return {gain >= 0.10 && mean(s.full) >= mean(s.outcome_only), d.str()};
}

Outcome criterion6(const TrainingStudy& s) {
  const double gain = mean(s.alias_with) - mean(s.alias_without);
  std::ostringstream d;
  d << "alias pass with reasoner " << mean(s.alias_with) << ", identity rewrites " << mean(s.alias_without)
    << " (gain " << 100.0 * gain << " pp)";
  return {gain >= 0.15, d.str()};
}

// --- criterion 7: CLI determinism -------------------------------------------

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

Outcome criterion7(const std::string& bin, const std::string& teacher, const fs::path& work) {
  for (const char* run : {"run_a", "run_b"}) {
    const fs::path out = work / run;
    fs::remove_all(out);
    const std::string cmd = "\"" + bin + "\" train --teacher \"" + teacher + "\" -o \"" + out.string() +
                            "\" --set trainer.steps=20 --set trainer.group_size=4 --set suite.n_prompts=50"
                            " --set trainer.checkpoint_every=10 --set trainer.eval_every=0 > \"" +
                            (work / (std::string(run) + ".log")).string() + "\" 2>&1";
    if (std::system(cmd.c_str()) != 0) return {false, std::string("train command failed for ") + run};
  }
  for (const char* f : {"metrics.jsonl", "ckpt_10.ckpt", "ckpt_20.ckpt", "final.ckpt", "config.resolved"}) {
    const fs::path a = work / "run_a" / f, b = work / "run_b" / f;
    if (!fs::exists(a) || slurp(a) != slurp(b)) return {false, std::string(f) + " differs or is missing"};
  }
  return {true, "byte-identical: metrics.jsonl, 3 checkpoints, config.resolved"};
}

// --- criterion 8: decode invariants -------------------------------------------

Outcome criterion8() {
  Rng rng(808);
  BenchSuiteConfig bc;
  Rng srng(9);
  const auto suite = gen_benchmark_suite(bc, srng);
  int good = 0;
  for (int i = 0; i < 100; ++i) {
    const PolicyParams p = init_params(PolicyHyper{}, rng.next(), 0.5 + rng.uniform());
    const DecodeSchedule sched{rng.between(1, 12), 1.0};
    const auto r = decode(p, suite[rng.below(suite.size())].text, sched, rng.next());
    bool ok = r.trace.n_steps() == sched.steps && r.grid.count(TokenVocab::mask) == 0;
    int prev = r.trace.snapshots.front().count(TokenVocab::mask);
    ok &= prev == 256;
    for (int k = 1; k < r.trace.n_steps(); ++k) {
      const int m = r.trace.snapshots[static_cast<std::size_t>(k)].count(TokenVocab::mask);
      ok &= m < prev;
      prev = m;
    }
    ok &= r.grid.count(TokenVocab::mask) < prev;
    good += ok;
  }
  return {good == 100, std::to_string(good) + "/100 decodes strictly decreasing to 0 masked cells"};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"acceptance criteria"};
  std::string teacher_path, bin = "viscoglab", work = "acceptance_work";
  int steps = 2000, seeds = 5;
  app.add_option("--teacher", teacher_path, "pretrained teacher checkpoint (pretrained here when omitted)");
  app.add_option("--viscoglab", bin, "path of the viscoglab binary");
  app.add_option("--work", work, "scratch directory");
  app.add_option("--steps", steps, "GRPO steps per training run");
  app.add_option("--seeds", seeds, "training seeds per configuration");
  CLI11_PARSE(app, argc, argv);

  fs::create_directories(work);
  if (teacher_path.empty()) {
    teacher_path = (fs::path(work) / "teacher.ckpt").string();
    const std::string cmd = "\"" + bin + "\" pretrain-teacher -o \"" + teacher_path + "\" > \"" +
                            (fs::path(work) / "pretrain.log").string() + "\" 2>&1";
    if (std::system(cmd.c_str()) != 0) {
      std::cerr << "teacher pretraining failed\n";
      return 1;
    }
  }
  const Checkpoint ck = load_checkpoint(teacher_path, PolicyHyper{});
  const auto prov = ck.teacher_provenance.value_or(std::make_pair(std::uint64_t{0}, 0));
  const TeacherParams teacher(ck.policy, prov.first, prov.second);

  std::vector<std::pair<int, Outcome>> results;
  const auto run = [&](int id, const std::function<Outcome()>& f) {
    const auto t0 = Clock::now();
    Outcome o;
    try {
      o = f();
    } catch (const std::exception& e) {
      o = {false, std::string("threw: ") + e.what()};
    }
    o.detail += " [" + std::to_string(static_cast<int>(seconds_since(t0))) + " s]";
    std::cerr << "criterion " << id << " done: " << o.detail << std::endl;
    results.emplace_back(id, o);
  };
  run(1, criterion1);
  run(2, criterion2);
  run(3, [&] { return criterion3(teacher); });
  run(4, criterion4);
  TrainingStudy study;
  bool study_ok = true;
  std::string study_error;
  const auto t0 = Clock::now();
  try {
    study = run_study(teacher, steps, seeds);
  } catch (const std::exception& e) {
    study_ok = false;
    study_error = e.what();
  }
  const std::string took = " [study " + std::to_string(static_cast<int>(seconds_since(t0))) + " s]";
  results.emplace_back(5, study_ok ? criterion5(study) : Outcome{false, "threw: " + study_error});
  results.back().second.detail += took;
  results.emplace_back(6, study_ok ? criterion6(study) : Outcome{false, "threw: " + study_error});
  run(7, [&] { return criterion7(bin, teacher_path, work); });
  run(8, criterion8);

  int failed = 0;
  for (const auto& [id, o] : results) {
    std::cout << "criterion " << id << ": " << (o.pass ? "PASS" : "FAIL") << "  " << o.detail << '\n';
    failed += !o.pass;
  }
  std::cout << (failed == 0 ? "all criteria passed" : std::to_string(failed) + " criteria failed") << '\n';
  return failed == 0 ? 0 : 1;
}
