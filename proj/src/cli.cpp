#include "viscog/cli.hpp"

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

#include <CLI11.hpp>

#include "viscog/config.hpp"
#include "viscog/error.hpp"
#include "viscog/image.hpp"

namespace viscog {

namespace {

namespace fs = std::filesystem;

struct Common {
  std::string config;
  std::vector<std::string> sets;
  int workers = 0;

  RunConfig load() const {
    RunConfig c = config.empty() ? default_config() : load_config(config);
    std::vector<std::string> all = sets;
    if (workers > 0) all.push_back("workers=" + std::to_string(workers));
    return all.empty() ? c : apply_overrides(c, all);
  }
};

void add_common(CLI::App* sub, Common& c) {
  sub->add_option("-c,--config", c.config, "JSON config file (defaults apply when omitted)");
  sub->add_option("--set", c.sets, "override a config field, e.g. --set trainer.lr=0.02");
  sub->add_option("--workers", c.workers, "rollout worker threads");
}

fs::path parent_dir(const std::string& file) {
  fs::path p = fs::path(file).parent_path();
  return p.empty() ? fs::path(".") : p;
}

std::vector<PromptSpec> training_suite(const RunConfig& c, const std::string& path) {
  if (!path.empty()) return load_suite(path);
  Rng rng(c.suite_seed());
  return gen_training_suite(c.suite, rng);
}

std::vector<PromptSpec> bench_suite(const RunConfig& c, const std::string& path) {
  if (!path.empty()) return load_suite(path);
  Rng rng(c.bench_suite_seed());
  return gen_benchmark_suite(c.bench_suite, rng);
}

TeacherParams load_teacher(const std::string& path, const PolicyHyper& hp) {
  Checkpoint ck = load_checkpoint(path, hp);
  const auto prov = ck.teacher_provenance.value_or(std::make_pair(std::uint64_t{0}, 0));
  return TeacherParams(std::move(ck.policy), prov.first, prov.second);
}

ReasonerParams reasoner_from(const Checkpoint& ck) {
  ReasonerParams r;
  if (ck.reasoner) {
    if (ck.reasoner->size() != kReasonerFeatures) throw DataError("checkpoint reasoner has the wrong size");
    r.w = *ck.reasoner;
  }
  return r;
}

void print_bench(std::ostream& out, const BenchResult& r) {
  for (const auto& s : r.subtasks)
    out << s.name << ' ' << s.passes << '/' << s.n_images << ' ' << s.pass_rate << '\n';
  out << "overall " << r.overall << '\n';
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"viscoglab: stage-aware GRPO on synthetic token-grid images"};
  app.require_subcommand(1);

  Common gen_c, pre_c, train_c, eval_c, abl_c, ren_c;
  std::string gen_out;
  bool gen_bench = false;
  auto* gen = app.add_subcommand("gen-suite", "generate a training or benchmark prompt suite");
  add_common(gen, gen_c);
  gen->add_option("-o,--out", gen_out, "suite file")->required();
  gen->add_flag("--bench", gen_bench, "generate the benchmark suite instead");

  std::string pre_out, pre_suite;
  auto* pre = app.add_subcommand("pretrain-teacher", "supervised masked-reconstruction teacher");
  add_common(pre, pre_c);
  pre->add_option("-o,--out", pre_out, "teacher checkpoint")->required();
  pre->add_option("--suite", pre_suite, "training suite (generated from the config when omitted)");

  std::string tr_teacher, tr_out, tr_suite, tr_bench, tr_resume, tr_init;
  auto* tr = app.add_subcommand("train", "GRPO training of the generator and reasoner");
  add_common(tr, train_c);
  tr->add_option("--teacher", tr_teacher, "teacher checkpoint");
  tr->add_option("-o,--out", tr_out, "run directory")->required();
  tr->add_option("--suite", tr_suite, "training suite");
  tr->add_option("--bench-suite", tr_bench, "benchmark suite for periodic snapshots");
  tr->add_option("--init", tr_init, "generator init checkpoint (default: the teacher)");
  tr->add_option("--resume", tr_resume, "checkpoint written by an earlier run of the same config");

  std::string ev_ckpt, ev_suite, ev_out;
  bool ev_no_reasoner = false;
  auto* ev = app.add_subcommand("eval", "benchmark a checkpoint");
  add_common(ev, eval_c);
  ev->add_option("--ckpt", ev_ckpt, "checkpoint")->required();
  ev->add_option("--suite", ev_suite, "benchmark suite (generated from the config when omitted)");
  ev->add_option("-o,--out", ev_out, "output directory")->required();
  ev->add_flag("--no-reasoner", ev_no_reasoner, "decode the original prompts");

  std::string ab_teacher, ab_out, ab_suite, ab_bench, ab_init;
  auto* ab = app.add_subcommand("ablate", "reward ablation table");
  add_common(ab, abl_c);
  ab->add_option("--teacher", ab_teacher, "teacher checkpoint")->required();
  ab->add_option("-o,--out", ab_out, "output directory")->required();
  ab->add_option("--suite", ab_suite, "training suite");
  ab->add_option("--bench-suite", ab_bench, "benchmark suite");
  ab->add_option("--init", ab_init, "generator init checkpoint (default: the teacher)");

  std::string rn_ckpt, rn_prompt, rn_spec, rn_out;
  std::uint64_t rn_seed = 0;
  int rn_images = 1;
  bool rn_steps = false, rn_rewrite = false;
  auto* rn = app.add_subcommand("render", "decode prompts and export images");
  add_common(rn, ren_c);
  rn->add_option("--ckpt", rn_ckpt, "checkpoint")->required();
  auto* o_prompt = rn->add_option("--prompt", rn_prompt, "prompt text, e.g. \"a red dog left of a blue cat\"");
  auto* o_spec = rn->add_option("--spec", rn_spec, "suite file of prompt specs");
  o_prompt->excludes(o_spec);
  rn->add_option("-o,--out", rn_out, "output directory")->required();
  rn->add_option("--seed", rn_seed, "decode seed");
  rn->add_option("--images", rn_images, "images per prompt");
  rn->add_flag("--steps", rn_steps, "also export the partial grid before every decode step");
  rn->add_flag("--rewrite", rn_rewrite, "decode the reasoner's greedy rewrite");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (gen->parsed()) {
      const RunConfig c = gen_c.load();
      const auto suite = gen_bench ? bench_suite(c, "") : training_suite(c, "");
      fs::create_directories(parent_dir(gen_out));
      save_suite(gen_out, suite);
      write_resolved(parent_dir(gen_out).string(), c);
      out << "wrote " << suite.size() << " prompts to " << gen_out << '\n';
    } else if (pre->parsed()) {
      const RunConfig c = pre_c.load();
      const auto suite = training_suite(c, pre_suite);
      const auto data = make_pretrain_data(suite, c.suite.scene, c.pretrain_per_prompt, c.pretrain_data_seed());
      const fs::path dir = parent_dir(pre_out);
      fs::create_directories(dir);
      std::ofstream curve(dir / "pretrain_loss.csv", std::ios::binary);
      if (!curve) throw IoError("cannot write the pretraining loss curve");
      curve << "step,loss\n";
      const int every = std::max(1, c.pretrain.steps / 20);
      auto res = pretrain_teacher(init_params(c.model, c.init_seed(), c.init_scale), data, c.pretrain,
                                  [&](int s, double l) {
                                    curve << s << ',' << l << '\n';
                                    if (s % every == 0) out << "step " << s << " loss " << l << '\n';
                                  });
      save_checkpoint(pre_out, {res.teacher.params(), std::nullopt,
                                std::make_pair(res.teacher.pretrain_seed(), res.teacher.steps()), 0});
      write_resolved(dir.string(), c);
      out << "final loss " << res.loss_curve.back() << " (uniform " << std::log(TokenVocab::n_emit) << ")\n";
    } else if (tr->parsed()) {
      const RunConfig c = train_c.load();
      const auto suite = training_suite(c, tr_suite);
      std::optional<TeacherParams> teacher;
      if (!tr_teacher.empty()) teacher = load_teacher(tr_teacher, c.model);
      if (!teacher && (c.trainer.toggles.r_p || c.trainer.kl_coef > 0.0 || tr_init.empty()))
        throw ConfigError("train needs --teacher (process reward, KL penalty or default init)");
      TrainState st{teacher ? teacher->params() : PolicyParams(c.model), {}, 0};
      if (!tr_init.empty()) {
        Checkpoint ck = load_checkpoint(tr_init, c.model);
        st.policy = std::move(ck.policy);
        st.reasoner = reasoner_from(ck);
      }
      if (!tr_resume.empty()) {
        Checkpoint ck = load_checkpoint(tr_resume, c.model);
        st = {std::move(ck.policy), reasoner_from(ck), ck.step};
      }
      LoopConfig loop;
      loop.out_dir = tr_out;
      loop.checkpoint_every = c.checkpoint_every;
      loop.eval_every = c.eval_every;
      loop.bench = c.bench;
      if (c.eval_every > 0) loop.bench_suite = bench_suite(c, tr_bench);
      write_resolved(tr_out, c);
      const auto res = train_loop(std::move(st), teacher ? &*teacher : nullptr, suite, c.trainer, loop,
                                  [&](const StepMetrics& m) {
                                    if (m.step % 100 == 0) out << metrics_line(m) << '\n';
                                  });
      out << "finished at step " << res.state.step << '\n';
    } else if (ev->parsed()) {
      const RunConfig c = eval_c.load();
      const Checkpoint ck = load_checkpoint(ev_ckpt, c.model);
      const ReasonerParams reasoner = reasoner_from(ck);
      const auto suite = bench_suite(c, ev_suite);
      const BenchResult r = run_benchmark(ck.policy, ev_no_reasoner ? nullptr : &reasoner, suite, c.bench);
      fs::create_directories(ev_out);
      const std::string stem = (fs::path(ev_out) / ("bench_" + std::to_string(ck.step))).string();
      write_bench_csv(stem + ".csv", r);
      write_bench_json(stem + ".json", r);
      write_resolved(ev_out, c);
      print_bench(out, r);
    } else if (ab->parsed()) {
      const RunConfig c = abl_c.load();
      const auto suite = training_suite(c, ab_suite);
      const auto bench = bench_suite(c, ab_bench);
      const TeacherParams teacher = load_teacher(ab_teacher, c.model);
      TrainState init{teacher.params(), {}, 0};
      if (!ab_init.empty()) {
        Checkpoint ck = load_checkpoint(ab_init, c.model);
        init = {std::move(ck.policy), reasoner_from(ck), 0};
      }
      const auto rows = run_ablation(init, &teacher, suite, c.trainer, c.ablation, bench, c.bench,
                                     [&](const std::string& s) { out << s << '\n'; });
      fs::create_directories(ab_out);
      write_ablation_csv((fs::path(ab_out) / "ablation.csv").string(), rows);
      write_ablation_json((fs::path(ab_out) / "ablation.json").string(), rows);
      write_resolved(ab_out, c);
      for (const auto& r : rows)
        out << "r_r=" << r.toggles.r_r << " r_p=" << r.toggles.r_p << " r_o=" << r.toggles.r_o
            << " overall " << r.overall.mean << " +- " << r.overall.std << '\n';
    } else if (rn->parsed()) {
      const RunConfig c = ren_c.load();
      const Checkpoint ck = load_checkpoint(rn_ckpt, c.model);
      const ReasonerParams reasoner = reasoner_from(ck);
      const AliasTable table = AliasTable::standard();
      std::vector<PromptSpec> specs;
      if (!rn_spec.empty())
        specs = load_suite(rn_spec);
      else if (!rn_prompt.empty())
        specs = {parse_prompt(rn_prompt, table, c.suite.scene)};
      else
        throw ConfigError("render needs --prompt or --spec");
      if (rn_images < 1) throw ConfigError("--images must be at least 1");
      fs::create_directories(rn_out);
      for (const auto& spec : specs) {
        std::vector<int> text = spec.text;
        if (rn_rewrite) {
          const auto cands = propose_rewrites(spec, table, TypicalityTable::standard(), c.suite.scene);
          text = cands[static_cast<std::size_t>(
                           greedy_rewrite(reasoner, candidate_features(spec, cands, table)).index)]
                     .spec.text;
        }
        for (int j = 0; j < rn_images; ++j) {
          const std::uint64_t seed =
              derive_seed(rn_seed, {static_cast<std::uint64_t>(spec.id), static_cast<std::uint64_t>(j)});
          const DecodeResult d = decode(ck.policy, text, c.trainer.schedule, seed);
          const std::string stem = "prompt" + std::to_string(spec.id) + "_img" + std::to_string(j);
          export_image(d.grid, (fs::path(rn_out) / (stem + ".png")).string());
          if (rn_steps)
            for (int k = 0; k < d.trace.n_steps(); ++k)
              export_image(d.trace.snapshots[static_cast<std::size_t>(k)],
                           (fs::path(rn_out) / (stem + "_step" + std::to_string(k) + ".png")).string());
          const ImageScore s = score_image(d.grid, spec, c.bench.rules, c.bench.detect_min_area);
          out << stem << " \"" << describe(text) << "\" " << (s.pass() ? "PASS" : "FAIL") << '\n';
        }
      }
      write_resolved(rn_out, c);
    }
  } catch (const Error& e) {
    err << "error (" << to_string(e.kind()) << "): " << e.what() << '\n';
    switch (e.kind()) {
      case ErrorKind::config: return kExitConfig;
      case ErrorKind::data: return kExitData;
      case ErrorKind::numeric: return kExitNumeric;
      case ErrorKind::io: return kExitIo;
      case ErrorKind::contract: return kExitOther;
    }
  } catch (const fs::filesystem_error& e) {
    err << "error (io): " << e.what() << '\n';
    return kExitIo;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitOther;
  }
  return kExitOk;
}

}  // namespace viscog
