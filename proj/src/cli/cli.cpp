#include <cstdlib>
#include <iostream>

#include "CLI11.hpp"
#include "json.hpp"
#include "soda/cli.hpp"
#include "soda/config.hpp"
#include "soda/error.hpp"
#include "soda/io.hpp"
#include "soda/parallel.hpp"
#include "soda/report.hpp"
#include "soda/rng.hpp"

namespace soda {

using nlohmann::json;

namespace {

struct CommonArgs {
  std::string config;
  std::vector<std::uint64_t> seeds;
  std::string out;
  int threads = 0;
};

void add_common(CLI::App* cmd, CommonArgs& args) {
  cmd->add_option("--config", args.config, "experiment config (JSON)")->required();
  cmd->add_option("--seed", args.seeds, "run only these seeds (default: config seeds)");
  cmd->add_option("--out", args.out, "output directory (overrides SODA_OUT_DIR and config)");
  cmd->add_option("--threads", args.threads, "worker threads (overrides config)");
}

struct Context {
  ExperimentSpec spec;
  fs::path out;
  std::vector<std::uint64_t> seeds;
};

Context load_context(const CommonArgs& args) {
  Context ctx;
  ctx.spec = load_config(args.config);
  ctx.seeds = args.seeds.empty() ? ctx.spec.seeds : args.seeds;
  if (!args.out.empty()) {
    ctx.out = args.out;
  } else if (const char* env = std::getenv("SODA_OUT_DIR"); env != nullptr && *env != '\0') {
    ctx.out = env;
  } else {
    ctx.out = ctx.spec.output_dir;
  }
  set_worker_threads(args.threads > 0 ? args.threads : ctx.spec.threads);
  return ctx;
}

TrainConfig seeded(const ExperimentSpec& spec, std::uint64_t seed) {
  TrainConfig c = spec.train;
  c.seed = seed;
  return c;
}

fs::path seed_dir(const fs::path& out, std::string_view stage, std::uint64_t seed) {
  return out / std::string(stage) / ("seed_" + std::to_string(seed));
}

void write_spec(const fs::path& dir, const ExperimentSpec& spec, std::uint64_t seed) {
  ExperimentSpec copy = spec;
  copy.seeds = {seed};
  atomic_write(dir / "config.json", spec_to_json(copy).dump(2) + "\n");
}

void write_run(const fs::path& dir, const ExperimentSpec& spec, const MethodRun& run) {
  write_spec(dir, spec, run.report.seed);
  atomic_write(dir / "report.json", report_to_json(run.report).dump(2) + "\n");
  atomic_write(dir / "metrics.jsonl", metrics_to_jsonl(run.report.metrics));
  atomic_write(dir / "evals.csv", eval_rows_csv(run.report));
  for (const auto& [name, data] : run.datasets) {
    atomic_write(dir / "data" / (name + ".jsonl"), dataset_to_jsonl(data));
  }
  if (!run.preferences.empty()) {
    atomic_write(dir / "data" / "preferences.jsonl", preferences_to_jsonl(run.preferences));
  }
  for (const auto& [tag, params] : run.checkpoints) {
    save_checkpoint(dir / "checkpoints" / (tag + ".ckpt"), Checkpoint{tag, params});
  }
  write_manifest(dir);
}

int cmd_gen_data(const CommonArgs& args) {
  const Context ctx = load_context(args);
  for (std::uint64_t seed : ctx.seeds) {
    const TrainConfig config = seeded(ctx.spec, seed);
    const BenchmarkSetup setup = make_setup(ctx.spec.setup, seed);
    const BlackBoxTeacher teacher(setup.teacher);
    CostCounters costs;
    const Dataset data = generate_teacher_data(teacher, setup.prompts.train, config, costs);
    const fs::path dir = seed_dir(ctx.out, "data", seed);
    write_spec(dir, ctx.spec, seed);
    atomic_write(dir / "prompts_train.jsonl", prompts_to_jsonl(setup.prompts.train));
    atomic_write(dir / "prompts_heldout.jsonl", prompts_to_jsonl(setup.prompts.heldout));
    atomic_write(dir / "teacher.jsonl", dataset_to_jsonl(data));
    save_checkpoint(dir / "teacher.ckpt", Checkpoint{"teacher", setup.teacher});
    save_checkpoint(dir / "q0.ckpt", Checkpoint{"q0", setup.base});
    write_manifest(dir);
    std::cout << json{{"stage", "gen-data"}, {"seed", seed}, {"dir", dir.string()},
                      {"teacher_queries", costs.teacher_queries}}
                     .dump()
              << "\n";
  }
  return 0;
}

int cmd_snapshot(const CommonArgs& args) {
  const Context ctx = load_context(args);
  for (std::uint64_t seed : ctx.seeds) {
    const TrainConfig config = seeded(ctx.spec, seed);
    const BenchmarkSetup setup = make_setup(ctx.spec.setup, seed);
    CostCounters costs;
    const auto [snapshot, data] = take_snapshot(setup.base, setup.prompts.train, config, costs);
    const fs::path dir = seed_dir(ctx.out, "snapshot", seed);
    write_spec(dir, ctx.spec, seed);
    atomic_write(dir / "snapshot.jsonl", dataset_to_jsonl(data));
    std::string manifest;
    for (const ManifestEntry& m : snapshot.manifest()) {
      manifest += json{{"prompt_index", m.prompt_index}, {"seed", m.seed},
                       {"temperature", m.temperature}}
                      .dump() +
                  "\n";
    }
    atomic_write(dir / "generation_manifest.jsonl", manifest);
    save_checkpoint(dir / "q0.ckpt", Checkpoint{"q0", snapshot.model()});
    write_manifest(dir);
    std::cout << json{{"stage", "snapshot"}, {"seed", seed}, {"dir", dir.string()},
                      {"student_generations", costs.student_generations}}
                     .dump()
              << "\n";
  }
  return 0;
}

int cmd_warmup(const CommonArgs& args) {
  const Context ctx = load_context(args);
  for (std::uint64_t seed : ctx.seeds) {
    const TrainConfig config = seeded(ctx.spec, seed);
    const BenchmarkSetup setup = make_setup(ctx.spec.setup, seed);
    const BlackBoxTeacher teacher(setup.teacher);
    CostCounters costs;
    const Dataset data = generate_teacher_data(teacher, setup.prompts.train, config, costs);
    MetricLog log;
    const WarmupResult w = warmup(setup.base, data, config, config.warmup_epochs, "warmup", &log);
    const fs::path dir = seed_dir(ctx.out, "warmup", seed);
    write_spec(dir, ctx.spec, seed);
    atomic_write(dir / "metrics.jsonl", metrics_to_jsonl(log.rows()));
    save_checkpoint(dir / "q_w.ckpt", Checkpoint{"q_w", w.model});
    write_manifest(dir);
    std::cout << json{{"stage", "warmup"}, {"seed", seed}, {"dir", dir.string()},
                      {"epoch_losses", w.epoch_losses}}
                     .dump()
              << "\n";
  }
  return 0;
}

int cmd_method(const CommonArgs& args, Method method) {
  const Context ctx = load_context(args);
  for (std::uint64_t seed : ctx.seeds) {
    const TrainConfig config = seeded(ctx.spec, seed);
    const std::vector<MethodRun> runs = run_experiment(method, ctx.spec.setup, config, ctx.spec.eval);
    for (const MethodRun& run : runs) {
      std::string stage(method_name(method));
      if (method == Method::Ablation) stage += "/" + run.report.rejection_source;
      const fs::path dir = seed_dir(ctx.out, stage, seed);
      write_run(dir, ctx.spec, run);
      const ComparisonRow row = comparison_row(run.report);
      std::cout << json{{"method", row.method},
                        {"seed", seed},
                        {"dir", dir.string()},
                        {"kl_heldout", row.kl_heldout},
                        {"judge_score_heldout", row.judge_score_heldout},
                        {"student_generations", row.student_generations}}
                       .dump()
                << "\n";
    }
  }
  return 0;
}

int cmd_eval(const CommonArgs& args, const std::string& checkpoint) {
  const Context ctx = load_context(args);
  const Checkpoint ckpt = load_checkpoint(checkpoint);
  for (std::uint64_t seed : ctx.seeds) {
    const TrainConfig config = seeded(ctx.spec, seed);
    const BenchmarkSetup setup = make_setup(ctx.spec.setup, seed);
    if (ckpt.params.vocab_size() != setup.teacher.vocab_size()) {
      fail(ErrorCode::InvalidInput, "checkpoint vocabulary does not match the config");
    }
    const auto evals = evaluate_model(ckpt.params, setup, config, ctx.spec.eval);
    json out = {{"stage", ckpt.stage}, {"seed", seed}};
    for (const auto& [split, e] : evals) {
      out[split] = {{"kl_to_teacher", e.kl_to_teacher},
                    {"judge_score", e.judge_score},
                    {"n_prompts", e.n_prompts}};
    }
    const fs::path dir = seed_dir(ctx.out, "eval", seed);
    atomic_write(dir / ("eval_" + ckpt.stage + ".json"), out.dump(2) + "\n");
    std::cout << out.dump() << "\n";
  }
  return 0;
}

int cmd_repr(const CommonArgs& args, const std::vector<std::string>& checkpoints) {
  const Context ctx = load_context(args);
  if (ctx.spec.setup.architecture != Architecture::TinyTransformer) {
    fail(ErrorCode::UnsupportedArchitecture, "repr needs architecture = transformer");
  }
  for (std::uint64_t seed : ctx.seeds) {
    const TrainConfig config = seeded(ctx.spec, seed);
    const BenchmarkSetup setup = make_setup(ctx.spec.setup, seed);
    std::vector<ModelParams> candidates;
    std::vector<std::string> ids;
    std::vector<double> kl;
    if (checkpoints.empty()) {
      for (Method m : {Method::SeqKd, Method::Soda}) {
        for (MethodRun& run : run_experiment(m, ctx.spec.setup, config, ctx.spec.eval)) {
          kl.push_back(run.report.evals.at("heldout").kl_to_teacher);
          candidates.push_back(std::move(run.model));
          ids.emplace_back(method_name(m));
        }
      }
      // Unrelated model of the same shape as a floor for CKA.
      candidates.push_back(ModelParams::random_transformer(
          ctx.spec.setup.vocab_size, ctx.spec.setup.dims, ctx.spec.setup.output_scale,
          derive_seed(seed, "repr_control")));
      ids.emplace_back("random_init");
    } else {
      for (const std::string& path : checkpoints) {
        Checkpoint c = load_checkpoint(path);
        ids.push_back(c.stage);
        candidates.push_back(std::move(c.params));
      }
    }
    const std::vector<ReprReport> reports =
        repr_report(setup.base, candidates, ids, setup.prompts.heldout);
    const fs::path dir = seed_dir(ctx.out, "repr", seed);
    write_spec(dir, ctx.spec, seed);
    atomic_write(dir / "repr_cka.csv", repr_cka_csv(reports));
    atomic_write(dir / "repr_stats.csv", repr_stats_csv(reports));
    json summary = {{"seed", seed}, {"entropy_unit", "nats"}, {"kurtosis_convention", "pearson"},
                    {"n_prompts", setup.prompts.heldout.size()}};
    if (kl.size() >= 2) {
      std::vector<double> entropy, kurtosis;
      for (std::size_t i = 0; i < kl.size(); ++i) {
        entropy.push_back(reports[i].last_layer_entropy);
        kurtosis.push_back(reports[i].last_layer_kurtosis);
      }
      // Reported only; the sign is not asserted anywhere.
      try {
        summary["corr_entropy_vs_heldout_kl"] = pearson_correlation(entropy, kl);
        summary["corr_kurtosis_vs_heldout_kl"] = pearson_correlation(kurtosis, kl);
      } catch (const Error&) {
        summary["corr_entropy_vs_heldout_kl"] = nullptr;
        summary["corr_kurtosis_vs_heldout_kl"] = nullptr;
      }
    }
    atomic_write(dir / "repr.json", summary.dump(2) + "\n");
    write_manifest(dir);
    std::cout << summary.dump() << "\n";
  }
  return 0;
}

int cmd_report(const std::string& dir_arg) {
  const fs::path dir(dir_arg);
  if (!fs::is_directory(dir)) fail(ErrorCode::Io, dir_arg + " is not a directory");
  std::vector<fs::path> files;
  for (const auto& entry : fs::recursive_directory_iterator(dir)) {
    if (entry.is_regular_file() && entry.path().filename() == "report.json") files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  std::vector<RunReport> reports;
  for (const fs::path& f : files) {
    try {
      reports.push_back(report_from_json(json::parse(read_file(f))));
    } catch (const json::exception& e) {
      fail(ErrorCode::InvalidInput, f.string() + ": " + e.what());
    }
  }
  const std::string table = emit_comparison_table(reports);
  atomic_write(dir / "comparison.csv", table);
  std::cout << table;
  return 0;
}

int cmd_verify(const std::string& dir_arg) {
  std::vector<fs::path> manifests;
  for (const auto& entry : fs::recursive_directory_iterator(dir_arg)) {
    if (entry.is_regular_file() && entry.path().filename() == "manifest.json") {
      manifests.push_back(entry.path().parent_path());
    }
  }
  std::sort(manifests.begin(), manifests.end());
  if (manifests.empty()) fail(ErrorCode::Io, "no manifest.json under " + dir_arg);
  bool ok = true;
  for (const fs::path& d : manifests) {
    const VerifyResult r = verify_manifest(d);
    ok = ok && r.ok();
    std::cout << json{{"dir", d.string()}, {"ok", r.ok()}, {"mismatched", r.mismatched},
                      {"missing", r.missing}}
                     .dump()
              << "\n";
  }
  if (!ok) fail(ErrorCode::Io, "artifact hashes do not match their manifest");
  return 0;
}

void print_error(std::string_view code, const std::string& message) {
  std::cerr << json{{"error", {{"code", code}, {"message", message}}}}.dump() << "\n";
}

}  // namespace

int cli_main(int argc, char** argv) {
  CLI::App app{"Semi on-policy black-box distillation lab"};
  app.require_subcommand(1);
  CommonArgs common;
  std::string checkpoint, dir;
  std::vector<std::string> checkpoints;

  auto* gen = app.add_subcommand("gen-data", "sample teacher responses for the training prompts");
  auto* snap = app.add_subcommand("snapshot", "sample one response per prompt from the base student");
  auto* warm = app.add_subcommand("warmup", "SFT warmup on teacher data");
  auto* distill = app.add_subcommand("distill", "full SODA run");
  auto* seqkd = app.add_subcommand("seqkd", "SFT-only baseline");
  auto* gad = app.add_subcommand("gad", "adversarial baseline");
  auto* ablate = app.add_subcommand("ablate", "SODA with each rejection source");
  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint against the teacher");
  auto* repr = app.add_subcommand("repr", "representation analysis (transformer)");
  auto* report = app.add_subcommand("report", "aggregate report.json files into comparison.csv");
  auto* verify = app.add_subcommand("verify", "recheck artifact hashes against manifests");
  for (CLI::App* cmd : {gen, snap, warm, distill, seqkd, gad, ablate, eval, repr}) add_common(cmd, common);
  eval->add_option("--checkpoint", checkpoint, "checkpoint to evaluate")->required();
  repr->add_option("--checkpoint", checkpoints, "candidates (default: train SeqKD and SODA)");
  report->add_option("--dir", dir, "directory holding run outputs")->required();
  verify->add_option("--dir", dir, "directory holding run outputs")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    print_error(error_code_name(ErrorCode::Usage), e.what());
    return 2;
  }

  try {
    if (gen->parsed()) return cmd_gen_data(common);
    if (snap->parsed()) return cmd_snapshot(common);
    if (warm->parsed()) return cmd_warmup(common);
    if (distill->parsed()) return cmd_method(common, Method::Soda);
    if (seqkd->parsed()) return cmd_method(common, Method::SeqKd);
    if (gad->parsed()) return cmd_method(common, Method::Gad);
    if (ablate->parsed()) return cmd_method(common, Method::Ablation);
    if (eval->parsed()) return cmd_eval(common, checkpoint);
    if (repr->parsed()) return cmd_repr(common, checkpoints);
    if (report->parsed()) return cmd_report(dir);
    if (verify->parsed()) return cmd_verify(dir);
  } catch (const Error& e) {
    print_error(error_code_name(e.code()), e.what());
    const bool config_error =
        e.code() == ErrorCode::InvalidConfig || e.code() == ErrorCode::ConfigNotFound;
    return config_error ? 3 : 1;
  } catch (const std::exception& e) {
    print_error("INTERNAL_ERROR", e.what());
    return 1;
  }
  return 2;
}

}  // namespace soda
