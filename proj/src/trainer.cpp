#include "viscog/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <thread>

#include <json.hpp>

#include "viscog/error.hpp"

namespace viscog {

void TrainConfig::validate(int n_cells) const {
  if (group_size < 2) throw ConfigError("trainer.group_size must be at least 2");
  if (!(epsilon > 0.0 && epsilon < 1.0)) throw ConfigError("trainer.epsilon must lie in (0, 1)");
  if (!(lr >= 0.0) || !std::isfinite(lr)) throw ConfigError("trainer.lr must be non-negative");
  if (!(reasoner_lr >= 0.0) || !std::isfinite(reasoner_lr))
    throw ConfigError("trainer.reasoner_lr must be non-negative");
  if (steps < 0) throw ConfigError("trainer.steps must be non-negative");
  if (inner_epochs < 1) throw ConfigError("trainer.inner_epochs must be at least 1");
  if (!(kl_coef >= 0.0)) throw ConfigError("trainer.kl_coef must be non-negative");
  if (workers < 1) throw ConfigError("workers must be at least 1");
  schedule.validate(n_cells);
  outcome.count.validate();
  if (toggles.r_p) process.validate(schedule.steps);
}

namespace {

constexpr std::uint64_t kRewriteStream = 0x5EA5ULL;
constexpr std::uint64_t kNoiseStream = 0x0B5ULL;
constexpr std::uint64_t kOrderStream = 0xE90CULL;

MemberRollout roll_member(const PolicyParams& policy, const ReasonerParams& reasoner,
                          const TeacherParams* teacher, const RolloutGroup& g, const TrainConfig& cfg,
                          int step, int member) {
  MemberRollout m;
  m.seed = derive_seed(cfg.seed, {static_cast<std::uint64_t>(step), static_cast<std::uint64_t>(member)});
  if (cfg.toggles.r_r && g.candidates.size() > 1) {
    Rng rr(derive_seed(m.seed, {kRewriteStream}));
    const RewriteChoice c = sample_rewrite(reasoner, g.features, rr);
    m.rewrite = c.index;
    m.rewrite_logprob = c.logprob;
  }
  m.rewritten = g.candidates[static_cast<std::size_t>(m.rewrite)].spec;
  m.decoded = decode(policy, m.rewritten.text, cfg.schedule, m.seed);

  const std::uint64_t noise_seed = derive_seed(m.seed, {kNoiseStream});
  const OutcomeResult out = outcome_reward(m.decoded.grid, g.spec, cfg.outcome, noise_seed);
  RewardBreakdown& b = m.rewards;
  b.toggles = cfg.toggles;
  if (cfg.toggles.r_o) {
    b.r_s = out.r_s;
    b.r_n = out.r_n;
    b.r_c = out.r_c;
    b.r_h = out.r_h;
    b.r_o = out.r_o;
  }
  if (cfg.toggles.r_r) {
    if (m.rewrite == 0) {
      m.original = m.decoded.grid;
      b.r_r = 0.0;
    } else {
      // same seed for P and P'
      m.original = decode(policy, g.spec.text, cfg.schedule, m.seed).grid;
      const OutcomeResult base = outcome_reward(*m.original, g.spec, cfg.outcome, noise_seed);
      b.r_r = reasoning_reward(out.r_o, base.r_o, m.seed, m.seed);
    }
  }
  if (cfg.toggles.r_p) {
    std::vector<CellDistributions> pd, td;
    const PromptEncoding pe = encode_prompt(policy, m.rewritten.text);
    const PromptEncoding te = encode_prompt(teacher->params(), m.rewritten.text);
    for (int t : cfg.process.resolve(cfg.schedule.steps)) {
      const TokenGrid& snap = m.decoded.trace.snapshots[static_cast<std::size_t>(t)];
      pd.push_back(forward(policy, pe, snap));
      td.push_back(forward(teacher->params(), te, snap));
    }
    b.r_p = process_reward(pd, td, cfg.process);
  }
  b.total = total_reward(b);
  return m;
}

}  // namespace

RolloutGroup sample_group(const PolicyParams& policy, const ReasonerParams& reasoner,
                          const TeacherParams* teacher, const PromptSpec& spec, const TrainConfig& cfg,
                          int step, const AliasTable& table, const SceneConfig& scene) {
  cfg.validate(policy.hyper().n_cells());
  if ((cfg.toggles.r_p || cfg.kl_coef > 0.0) && !teacher)
    throw ConfigError("the process reward and the KL penalty need a teacher checkpoint");
  RolloutGroup g;
  g.spec = spec;
  if (cfg.toggles.r_r)
    g.candidates = propose_rewrites(spec, table, TypicalityTable::standard(), scene);
  else
    g.candidates = {{RewriteKind::identity, -1, std::nullopt, spec}};
  g.features = candidate_features(spec, g.candidates, table);
  g.members.resize(static_cast<std::size_t>(cfg.group_size));

  const int n_workers = std::min(cfg.workers, cfg.group_size);
  if (n_workers <= 1) {
    for (int i = 0; i < cfg.group_size; ++i)
      g.members[static_cast<std::size_t>(i)] = roll_member(policy, reasoner, teacher, g, cfg, step, i);
    return g;
  }
  std::vector<std::exception_ptr> errors(static_cast<std::size_t>(n_workers));
  std::vector<std::thread> pool;
  for (int w = 0; w < n_workers; ++w)
    pool.emplace_back([&, w] {
      try {
        for (int i = w; i < cfg.group_size; i += n_workers)
          g.members[static_cast<std::size_t>(i)] = roll_member(policy, reasoner, teacher, g, cfg, step, i);
      } catch (...) {
        errors[static_cast<std::size_t>(w)] = std::current_exception();
      }
    });
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
  return g;
}

const PromptSpec& pick_prompt(std::span<const PromptSpec> suite, std::uint64_t seed, int step) {
  if (suite.empty()) throw DataError("training suite is empty");
  const auto n = suite.size();
  const auto s = static_cast<std::size_t>(step);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(derive_seed(seed, {kOrderStream, static_cast<std::uint64_t>(s / n)}));
  rng.shuffle(std::span(order));
  return suite[order[s % n]];
}

StepMetrics train_step(TrainState& state, const TeacherParams* teacher, std::span<const PromptSpec> suite,
                       const TrainConfig& cfg, const AliasTable& table, const SceneConfig& scene) {
  const PromptSpec& spec = pick_prompt(suite, cfg.seed, state.step);
  const RolloutGroup g = sample_group(state.policy, state.reasoner, teacher, spec, cfg, state.step, table, scene);
  const auto G = static_cast<std::size_t>(cfg.group_size);

  StepMetrics m;
  m.step = state.step;
  m.prompt_id = spec.id;

  // generator: outcome and process rewards
  std::vector<double> gen_r(G), rr(G), old_lp(G);
  std::vector<int> chosen(G);
  for (std::size_t i = 0; i < G; ++i) {
    const auto& b = g.members[i].rewards;
    gen_r[i] = (cfg.toggles.r_p ? b.r_p : 0.0) + (cfg.toggles.r_o ? b.r_o : 0.0);
    rr[i] = b.r_r;
    chosen[i] = g.members[i].rewrite;
    old_lp[i] = g.members[i].rewrite_logprob;
  }
  const auto adv = advantages(gen_r);
  if (std::any_of(adv.begin(), adv.end(), [](double a) { return a != 0.0; })) {
    std::vector<SurrogateItem> items(G);
    for (std::size_t i = 0; i < G; ++i) {
      const auto& mem = g.members[i];
      items[i].prompt_text = mem.rewritten.text;
      items[i].trace = &mem.decoded.trace;
      items[i].old_logprob = mem.decoded.trace.logprob;
      items[i].advantage.assign(mem.decoded.trace.token.size(), adv[i]);
      if (cfg.kl_coef > 0.0)
        items[i].ref_logprob = traj_logprob(teacher->params(), mem.rewritten.text, mem.decoded.trace);
    }
    for (int e = 0; e < cfg.inner_epochs; ++e) {
      SurrogateResult res = loss_and_grad(state.policy, items, cfg.epsilon, cfg.kl_coef);
      if (e == 0) {
        m.loss = res.loss;
        m.clip_frac = res.clip_frac;
        m.grad_norm = res.grad.theta().norm();
      }
      state.policy.theta() -= cfg.lr * res.grad.theta();
      if (!state.policy.all_finite())
        throw NumericError("generator parameters diverged at step " + std::to_string(state.step));
    }
  }

  // reasoner: reasoning reward only
  if (cfg.toggles.r_r && g.candidates.size() > 1) {
    const ReasonerUpdate up = reasoner_update(state.reasoner, g.features, chosen, old_lp, rr,
                                              cfg.epsilon, cfg.reasoner_lr);
    state.reasoner = up.params;
    m.reasoner_loss = up.stats.loss;
    if (!state.reasoner.all_finite())
      throw NumericError("reasoner parameters diverged at step " + std::to_string(state.step));
  }

  RewardBreakdown& mean = m.mean;
  mean.toggles = cfg.toggles;
  int canonical = 0;
  for (const auto& mem : g.members) {
    const auto& b = mem.rewards;
    mean.r_s += b.r_s;
    mean.r_n += b.r_n;
    mean.r_c += b.r_c;
    mean.r_h += b.r_h;
    mean.r_o += b.r_o;
    mean.r_p += b.r_p;
    mean.r_r += b.r_r;
    mean.total += b.total;
    const auto& c = g.candidates[static_cast<std::size_t>(mem.rewrite)];
    canonical += c.kind == RewriteKind::alias_substitute && c.candidate == 0;
  }
  const double inv = 1.0 / static_cast<double>(G);
  for (double* x : {&mean.r_s, &mean.r_n, &mean.r_c, &mean.r_h, &mean.r_o, &mean.r_p, &mean.r_r, &mean.total})
    *x *= inv;
  m.canonical_rate = canonical * inv;
  ++state.step;
  return m;
}

std::string metrics_line(const StepMetrics& m) {
  nlohmann::ordered_json j;
  j["step"] = m.step;
  j["loss"] = m.loss;
  j["clip_frac"] = m.clip_frac;
  j["grad_norm"] = m.grad_norm;
  j["r_s"] = m.mean.r_s;
  j["r_n"] = m.mean.r_n;
  j["r_c"] = m.mean.r_c;
  j["r_h"] = m.mean.r_h;
  j["r_o"] = m.mean.r_o;
  j["r_p"] = m.mean.r_p;
  j["r_r"] = m.mean.r_r;
  j["total"] = m.mean.total;
  j["eval"] = m.eval_snapshot ? nlohmann::ordered_json(*m.eval_snapshot) : nlohmann::ordered_json(nullptr);
  j["prompt_id"] = m.prompt_id;
  j["reasoner_loss"] = m.reasoner_loss;
  j["canonical_rate"] = m.canonical_rate;
  return j.dump();
}

namespace {

namespace fs = std::filesystem;

void keep_metric_lines(const fs::path& path, int n) {
  std::vector<std::string> lines;
  if (std::ifstream is(path); is) {
    std::string line;
    while (static_cast<int>(lines.size()) < n && std::getline(is, line)) lines.push_back(line);
  }
  if (static_cast<int>(lines.size()) < n)
    throw DataError("metrics log '" + path.string() + "' has fewer lines than the resumed step");
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot write '" + path.string() + "'");
  for (const auto& l : lines) os << l << '\n';
}

}  // namespace

LoopResult train_loop(TrainState state, const TeacherParams* teacher, std::span<const PromptSpec> suite,
                      const TrainConfig& cfg, const LoopConfig& loop,
                      const std::function<void(const StepMetrics&)>& on_step) {
  cfg.validate(state.policy.hyper().n_cells());
  if (state.step < 0 || state.step > cfg.steps)
    throw ConfigError("resume step " + std::to_string(state.step) + " outside 0.." + std::to_string(cfg.steps));
  const bool write = !loop.out_dir.empty();
  const fs::path dir(loop.out_dir);
  std::ofstream metrics;
  std::optional<std::pair<std::uint64_t, int>> provenance;
  if (teacher) provenance = std::make_pair(teacher->pretrain_seed(), teacher->steps());
  if (write) {
    fs::create_directories(dir);
    const fs::path mp = dir / "metrics.jsonl";
    if (state.step > 0) keep_metric_lines(mp, state.step);
    metrics.open(mp, std::ios::binary | (state.step > 0 ? std::ios::app : std::ios::trunc));
    if (!metrics) throw IoError("cannot open '" + mp.string() + "'");
  }

  LoopResult res{std::move(state), {}};
  TrainState& st = res.state;
  const auto checkpoint = [&](const fs::path& p) {
    save_checkpoint(p.string(), {st.policy, st.reasoner.w, provenance, st.step});
  };
  while (st.step < cfg.steps) {
    StepMetrics m = train_step(st, teacher, suite, cfg);
    if (loop.eval_every > 0 && st.step % loop.eval_every == 0 && !loop.bench_suite.empty()) {
      const BenchResult br = run_benchmark(st.policy, &st.reasoner, loop.bench_suite, loop.bench);
      m.eval_snapshot = st.step;
      if (write) {
        write_bench_csv((dir / ("bench_" + std::to_string(st.step) + ".csv")).string(), br);
        write_bench_json((dir / ("bench_" + std::to_string(st.step) + ".json")).string(), br);
      }
    }
    if (write) {
      metrics << metrics_line(m) << '\n' << std::flush;
      if (!metrics) throw IoError("metrics write failed");
      if (loop.checkpoint_every > 0 && st.step % loop.checkpoint_every == 0)
        checkpoint(dir / ("ckpt_" + std::to_string(st.step) + ".ckpt"));
    }
    if (on_step) on_step(m);
    res.metrics.push_back(std::move(m));
  }
  if (write) checkpoint(dir / "final.ckpt");
  return res;
}

std::vector<AblationRow> run_ablation(const TrainState& init, const TeacherParams* teacher,
                                      std::span<const PromptSpec> suite, const TrainConfig& base,
                                      const AblationSpec& spec, std::span<const PromptSpec> bench_suite,
                                      const BenchConfig& bench,
                                      const std::function<void(const std::string&)>& log) {
  if (spec.seeds.size() < 3) throw ConfigError("ablation needs at least 3 seeds per row");
  if (spec.rows.empty()) throw ConfigError("ablation needs at least one toggle row");
  std::vector<AblationRow> rows;
  for (const auto& toggles : spec.rows) {
    AblationRow row;
    row.toggles = toggles;
    row.n_seeds = static_cast<int>(spec.seeds.size());
    std::vector<std::vector<double>> rates;
    for (std::uint64_t seed : spec.seeds) {
      TrainConfig cfg = base;
      cfg.toggles = toggles;
      cfg.seed = seed;
      LoopConfig loop;
      loop.eval_every = 0;
      const LoopResult r = train_loop(init, teacher, suite, cfg, loop);
      const BenchResult br = run_benchmark(r.state.policy, &r.state.reasoner, bench_suite, bench);
      if (row.subtasks.empty()) {
        for (const auto& s : br.subtasks) row.subtasks.push_back(s.name);
        rates.resize(br.subtasks.size());
      }
      for (std::size_t k = 0; k < br.subtasks.size(); ++k) rates[k].push_back(br.subtasks[k].pass_rate);
      row.per_seed_overall.push_back(br.overall);
      if (log)
        log("row r_r=" + std::to_string(toggles.r_r) + " r_p=" + std::to_string(toggles.r_p) +
            " r_o=" + std::to_string(toggles.r_o) + " seed=" + std::to_string(seed) +
            " overall=" + std::to_string(br.overall));
    }
    for (const auto& r : rates) row.rates.push_back(summarize(r));
    row.overall = summarize(row.per_seed_overall);
    rows.push_back(std::move(row));
  }
  return rows;
}

}  // namespace viscog
