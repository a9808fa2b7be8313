#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <set>

#include "soda/error.hpp"
#include "soda/memory.hpp"
#include "soda/parallel.hpp"
#include "soda/pipeline.hpp"
#include "soda/rng.hpp"
#include "batching.hpp"

namespace soda {

using detail::batches_per_epoch;
using detail::for_each_batch;

std::vector<std::string> TrainConfig::problems() const {
  std::vector<std::string> out;
  auto require = [&out](bool ok, const char* field, const char* rule) {
    if (!ok) out.push_back(std::string(field) + ": must satisfy " + rule);
  };
  require(beta > 0.0 && std::isfinite(beta), "beta", "beta > 0");
  require(warmup_epochs >= 0, "warmup_epochs", "warmup_epochs >= 0");
  require(dpo_epochs >= 1, "dpo_epochs", "dpo_epochs >= 1");
  require(gad_epochs >= 1, "gad_epochs", "gad_epochs >= 1");
  require(gad_warmup_epochs >= 0, "gad_warmup_epochs", "gad_warmup_epochs >= 0");
  require(rollouts >= 2, "rollouts", "rollouts >= 2");
  require(snapshot_temperature > 0.0, "snapshot_temperature", "snapshot_temperature > 0");
  require(teacher_temperature > 0.0, "teacher_temperature", "teacher_temperature > 0");
  require(rollout_temperature > 0.0, "rollout_temperature", "rollout_temperature > 0");
  require(corrupted_temperature >= 3.0, "corrupted_temperature", "corrupted_temperature >= 3");
  require(lr_sft > 0.0, "lr_sft", "lr_sft > 0");
  require(lr_dpo > 0.0, "lr_dpo", "lr_dpo > 0");
  require(lr_gad > 0.0, "lr_gad", "lr_gad > 0");
  require(gad_lr_ratio > 0.0, "gad_lr_ratio", "gad_lr_ratio > 0");
  require(momentum >= 0.0 && momentum < 1.0, "momentum", "0 <= momentum < 1");
  require(batch_size >= 1, "batch_size", "batch_size >= 1");
  require(max_len >= 1, "max_len", "max_len >= 1");
  require(rejection_source != ResponseSource::Teacher, "rejection_source",
          "rejection_source != teacher");
  return out;
}

void TrainConfig::validate() const {
  const std::vector<std::string> issues = problems();
  if (issues.empty()) return;
  std::string msg = issues.front();
  for (std::size_t i = 1; i < issues.size(); ++i) msg += "; " + issues[i];
  fail(ErrorCode::InvalidConfig, msg);
}

Tokens BlackBoxTeacher::sample(std::span<const Token> prompt, double temperature, int max_len,
                               std::uint64_t seed) const {
  queries_.fetch_add(1);
  return sample_response(params_, prompt, temperature, max_len, seed);
}

ModelParams make_synthetic_teacher(int vocab, double sharpness, std::uint64_t seed) {
  return ModelParams::random_tabular(vocab, sharpness, seed);
}

std::vector<Tokens> make_prompts(int vocab, std::size_t n, int prompt_len, std::uint64_t seed) {
  if (vocab < 2) fail(ErrorCode::InvalidConfig, "vocab_size >= 2");
  if (prompt_len < 1) fail(ErrorCode::InvalidConfig, "prompt_len >= 1");
  Rng rng(seed);
  std::vector<Tokens> out(n, Tokens(static_cast<std::size_t>(prompt_len)));
  const auto content = static_cast<std::uint64_t>(vocab > 2 ? vocab - 1 : 1);
  for (Tokens& p : out) {
    for (Token& t : p) t = static_cast<Token>(rng.below(content));
  }
  return out;
}

PromptSets make_prompt_sets(int vocab, std::size_t n_train, std::size_t n_heldout,
                            int prompt_len, std::uint64_t seed) {
  if (vocab < 2) fail(ErrorCode::InvalidConfig, "vocab_size >= 2");
  if (prompt_len < 1) fail(ErrorCode::InvalidConfig, "prompt_len >= 1");
  const double distinct = std::pow(static_cast<double>(std::max(1, vocab - 1)), prompt_len);
  if (distinct < static_cast<double>(n_heldout) * 2.0 + 1.0) {
    fail(ErrorCode::InvalidConfig, "prompt space too small for a disjoint held-out set");
  }
  PromptSets sets;
  sets.train = make_prompts(vocab, n_train, prompt_len, derive_seed(seed, "train_prompts"));
  const std::set<Tokens> seen(sets.train.begin(), sets.train.end());
  std::set<Tokens> taken;
  for (std::uint64_t batch = 0; sets.heldout.size() < n_heldout; ++batch) {
    if (batch > 1000) fail(ErrorCode::InvalidConfig, "could not draw disjoint held-out prompts");
    for (Tokens& p : make_prompts(vocab, n_heldout, prompt_len,
                                  derive_seed(seed, "heldout_prompts", batch))) {
      if (sets.heldout.size() == n_heldout) break;
      if (seen.contains(p) || !taken.insert(p).second) continue;
      sets.heldout.push_back(std::move(p));
    }
  }
  return sets;
}

Dataset generate_teacher_data(const BlackBoxTeacher& teacher, const std::vector<Tokens>& prompts,
                              const TrainConfig& config, CostCounters& costs) {
  if (prompts.empty()) fail(ErrorCode::InvalidInput, "need at least one prompt");
  Dataset data;
  data.source = ResponseSource::Teacher;
  data.examples.resize(prompts.size());
  data.seeds.resize(prompts.size());
  parallel_for(prompts.size(), [&](std::size_t i) {
    const std::uint64_t seed = derive_seed(config.seed, "teacher", i);
    data.seeds[i] = seed;
    data.examples[i] = SequenceExample::make(
        prompts[i], teacher.sample(prompts[i], config.teacher_temperature, config.max_len, seed));
  });
  costs.teacher_queries += prompts.size();
  return data;
}

Dataset replay_manifest(const ModelParams& model, const std::vector<Tokens>& prompts,
                        const std::vector<ManifestEntry>& manifest, int max_len) {
  Dataset data;
  data.source = ResponseSource::BaseStudent;
  data.examples.resize(manifest.size());
  data.seeds.resize(manifest.size());
  parallel_for(manifest.size(), [&](std::size_t i) {
    const ManifestEntry& m = manifest[i];
    if (m.prompt_index >= prompts.size()) {
      fail(ErrorCode::Alignment, "manifest refers to a missing prompt");
    }
    const Tokens& prompt = prompts[m.prompt_index];
    data.seeds[i] = m.seed;
    data.examples[i] =
        SequenceExample::make(prompt, sample_response(model, prompt, m.temperature, max_len, m.seed));
  });
  return data;
}

std::pair<Snapshot, Dataset> take_snapshot(const ModelParams& base,
                                           const std::vector<Tokens>& prompts,
                                           const TrainConfig& config, CostCounters& costs) {
  if (base.version() != 0) {
    fail(ErrorCode::StaleBase, "snapshot must come from the untouched base student (version " +
                                   std::to_string(base.version()) + " != 0)");
  }
  if (prompts.empty()) fail(ErrorCode::InvalidInput, "need at least one prompt");
  std::vector<ManifestEntry> manifest(prompts.size());
  for (std::size_t i = 0; i < prompts.size(); ++i) {
    manifest[i] = {i, derive_seed(config.seed, "snapshot", i), config.snapshot_temperature};
  }
  Dataset data = replay_manifest(base, prompts, manifest, config.max_len);
  costs.student_generations += prompts.size();
  return {Snapshot(base, std::move(manifest)), std::move(data)};
}

std::vector<PreferencePair> build_pref_dataset(const Dataset& chosen, const Dataset& rejected) {
  if (chosen.size() != rejected.size()) {
    fail(ErrorCode::Alignment, "chosen and rejected sets differ in length (" +
                                   std::to_string(chosen.size()) + " vs " +
                                   std::to_string(rejected.size()) + ")");
  }
  std::vector<PreferencePair> pairs(chosen.size());
  for (std::size_t i = 0; i < chosen.size(); ++i) {
    const SequenceExample& c = chosen.examples[i];
    const SequenceExample& r = rejected.examples[i];
    if (c.prompt != r.prompt) {
      fail(ErrorCode::Alignment, "prompt mismatch at pair " + std::to_string(i));
    }
    pairs[i] = PreferencePair{c.prompt, c.response, r.response, chosen.source, rejected.source};
  }
  return pairs;
}

Dataset make_rejection_source(ResponseSource mode, const TrainConfig& config,
                              const std::vector<Tokens>& prompts, const ModelParams& base,
                              const ModelParams* cross, CostCounters& costs) {
  switch (mode) {
    case ResponseSource::BaseStudent:
      return take_snapshot(base, prompts, config, costs).second;
    case ResponseSource::CrossStudent: {
      if (cross == nullptr) fail(ErrorCode::InvalidConfig, "cross_student rejection needs a second base model");
      if (cross->vocab_size() != base.vocab_size()) {
        fail(ErrorCode::InvalidConfig, "cross student vocabulary differs from the base");
      }
      std::vector<ManifestEntry> manifest(prompts.size());
      for (std::size_t i = 0; i < prompts.size(); ++i) {
        manifest[i] = {i, derive_seed(config.seed, "snapshot", i), config.snapshot_temperature};
      }
      Dataset data = replay_manifest(*cross, prompts, manifest, config.max_len);
      data.source = ResponseSource::CrossStudent;
      costs.student_generations += prompts.size();
      return data;
    }
    case ResponseSource::Corrupted: {
      const int truncated = std::max(1, config.max_len / 2);
      const double temperature = std::max(3.0, config.corrupted_temperature);
      Dataset data;
      data.source = ResponseSource::Corrupted;
      data.examples.resize(prompts.size());
      data.seeds.resize(prompts.size());
      parallel_for(prompts.size(), [&](std::size_t i) {
        data.seeds[i] = derive_seed(config.seed, "corrupted", i);
        data.examples[i] = SequenceExample::make(
            prompts[i], sample_response(base, prompts[i], temperature, truncated, data.seeds[i]));
      });
      costs.student_generations += prompts.size();
      return data;
    }
    case ResponseSource::Teacher:
      break;
  }
  fail(ErrorCode::InvalidConfig, "teacher is not a rejection source");
}

bool InstabilityDetector::push(double value) {
  bool spike = false;
  if (history_.size() >= min_history_) {
    std::vector<double> sorted = history_;
    const auto mid = sorted.begin() + static_cast<std::ptrdiff_t>(sorted.size() / 2);
    std::nth_element(sorted.begin(), mid, sorted.end());
    double median = *mid;
    if (sorted.size() % 2 == 0) {
      median = 0.5 * (median + *std::max_element(sorted.begin(), mid));
    }
    spike = median > 0.0 && value > factor_ * median;
  }
  history_.push_back(value);
  if (history_.size() > window_) history_.erase(history_.begin());
  return spike;
}

void MetricLog::record(MetricRow row) { rows_.push_back(std::move(row)); }

bool MetricLog::watch(const std::string& series, double value) {
  const bool spike = detectors_[series].push(value);
  if (spike) ++events_;
  return spike;
}

namespace {

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

}  // namespace

WarmupResult warmup(const ModelParams& base, const Dataset& teacher_data,
                    const TrainConfig& config, int epochs, const std::string& stage,
                    MetricLog* log) {
  if (teacher_data.size() == 0) fail(ErrorCode::InvalidInput, "warmup needs teacher data");
  WarmupResult out{base, {}};
  if (epochs <= 0) return out;
  const std::size_t n = teacher_data.size();
  const CosineSchedule schedule{config.lr_sft,
                                static_cast<std::size_t>(epochs) * batches_per_epoch(n, config.batch_size)};
  GradientDescent opt(config.momentum);
  std::vector<double> epoch_sum(static_cast<std::size_t>(epochs), 0.0);
  std::vector<SequenceExample> batch;
  for_each_batch(n, epochs, config.batch_size, derive_seed(config.seed, stage + "_order"),
                 [&](int epoch, std::size_t step, std::span<const std::size_t> idx) {
                   batch.clear();
                   for (std::size_t i : idx) batch.push_back(teacher_data.examples[i]);
                   const LossAndGrad lg = sft_loss_and_grad(out.model, batch);
                   const double rate = schedule.at(step);
                   opt.step(out.model, lg.grad, rate);
                   epoch_sum[static_cast<std::size_t>(epoch)] +=
                       lg.loss * static_cast<double>(idx.size());
                   if (log != nullptr) {
                     log->watch(stage + ".loss", lg.loss);
                     log->record({stage, epoch, step, lg.loss, std::nullopt, std::nullopt,
                                  l2_norm(lg.grad), rate});
                   }
                 });
  for (double s : epoch_sum) out.epoch_losses.push_back(s / static_cast<double>(n));
  return out;
}

WarmupResult warmup(const ModelParams& base, const Dataset& teacher_data,
                    const TrainConfig& config) {
  return warmup(base, teacher_data, config, config.warmup_epochs, "warmup", nullptr);
}

ModelParams dpo_train(const ModelParams& init, const ModelParams& ref,
                      const std::vector<PreferencePair>& pairs, const TrainConfig& config,
                      MetricLog* log) {
  if (pairs.empty()) fail(ErrorCode::InvalidInput, "DPO needs at least one preference pair");
  ModelParams model = init;
  const std::size_t n = pairs.size();
  // Step scaled by 1 / beta: the loss gradient carries a factor beta, so this
  // keeps the update size comparable across beta.
  const CosineSchedule schedule{config.lr_dpo / config.beta,
                                static_cast<std::size_t>(config.dpo_epochs) *
                                    batches_per_epoch(n, config.batch_size)};
  GradientDescent opt(config.momentum);
  std::vector<PreferencePair> batch;
  for_each_batch(n, config.dpo_epochs, config.batch_size, derive_seed(config.seed, "dpo_order"),
                 [&](int epoch, std::size_t step, std::span<const std::size_t> idx) {
                   batch.clear();
                   for (std::size_t i : idx) batch.push_back(pairs[i]);
                   const DpoBatchResult r = dpo_loss_and_grad(model, ref, batch, config.beta);
                   const double rate = schedule.at(step);
                   opt.step(model, r.grad, rate);
                   if (log != nullptr) {
                     log->watch("dpo.loss", r.loss);
                     log->record({"dpo", epoch, step, r.loss, r.mean_margin, r.mean_weight,
                                  l2_norm(r.grad), rate});
                   }
                 });
  return model;
}

namespace {

MethodRun soda_with_source(const TrainConfig& config, const std::vector<Tokens>& prompts,
                           const BlackBoxTeacher& teacher, const ModelParams& base,
                           const ModelParams* cross, const std::string& method) {
  config.validate();
  const auto t0 = std::chrono::steady_clock::now();
  MethodRun run;
  RunReport& report = run.report;
  report.method = method;
  report.seed = config.seed;
  report.config = config;
  report.rejection_source = std::string(source_name(config.rejection_source));
  MetricLog log;

  // The snapshot comes first: q0 must be untouched when it is sampled.
  Dataset rejected = config.rejection_source == ResponseSource::BaseStudent
                         ? take_snapshot(base, prompts, config, report.costs).second
                         : make_rejection_source(config.rejection_source, config, prompts, base,
                                                 cross, report.costs);
  Dataset teacher_data = generate_teacher_data(teacher, prompts, config, report.costs);
  run.preferences = build_pref_dataset(teacher_data, rejected);

  WarmupResult w = warmup(base, teacher_data, config, config.warmup_epochs, "warmup", &log);
  run.model = dpo_train(w.model, w.model, run.preferences, config, &log);

  run.checkpoints.emplace("q0", base);
  run.checkpoints.emplace("q_w", std::move(w.model));
  run.checkpoints.emplace("q_soda", run.model);
  run.datasets.emplace("teacher", std::move(teacher_data));
  run.datasets.emplace("rejected", std::move(rejected));
  report.metrics = log.rows();
  report.instability_events = log.instability_events();
  report.costs.wall_clock_seconds = seconds_since(t0);
  report.notes.push_back("warmup_epochs=" + std::to_string(config.warmup_epochs) +
                         " (GAD generator warmup uses " +
                         std::to_string(config.gad_warmup_epochs) + ")");
  return run;
}

}  // namespace

MethodRun distill_soda(const TrainConfig& config, const std::vector<Tokens>& prompts,
                       const BlackBoxTeacher& teacher, const ModelParams& base,
                       const ModelParams* cross) {
  return soda_with_source(config, prompts, teacher, base, cross, "soda");
}

MethodRun run_seqkd(const TrainConfig& config, const std::vector<Tokens>& prompts,
                    const BlackBoxTeacher& teacher, const ModelParams& base) {
  config.validate();
  const auto t0 = std::chrono::steady_clock::now();
  MethodRun run;
  RunReport& report = run.report;
  report.method = "seqkd";
  report.seed = config.seed;
  report.config = config;
  MetricLog log;
  Dataset teacher_data = generate_teacher_data(teacher, prompts, config, report.costs);
  run.model = warmup(base, teacher_data, config, config.warmup_epochs, "warmup", &log).model;
  run.checkpoints.emplace("q0", base);
  run.checkpoints.emplace("q_seqkd", run.model);
  run.datasets.emplace("teacher", std::move(teacher_data));
  report.metrics = log.rows();
  report.instability_events = log.instability_events();
  report.costs.wall_clock_seconds = seconds_since(t0);
  return run;
}

std::vector<MethodRun> run_ablation(const TrainConfig& config, const std::vector<Tokens>& prompts,
                                    const BlackBoxTeacher& teacher, const ModelParams& base,
                                    const ModelParams& cross) {
  std::vector<MethodRun> runs;
  for (ResponseSource mode : {ResponseSource::BaseStudent, ResponseSource::CrossStudent,
                              ResponseSource::Corrupted}) {
    TrainConfig c = config;
    c.rejection_source = mode;
    runs.push_back(soda_with_source(c, prompts, teacher, base, &cross, "ablation"));
  }
  return runs;
}

std::string_view method_name(Method method) {
  switch (method) {
    case Method::Soda: return "soda";
    case Method::SeqKd: return "seqkd";
    case Method::Gad: return "gad";
    case Method::Ablation: return "ablation";
  }
  return "unknown";
}

Method parse_method(std::string_view name) {
  if (name == "soda") return Method::Soda;
  if (name == "seqkd") return Method::SeqKd;
  if (name == "gad") return Method::Gad;
  if (name == "ablation") return Method::Ablation;
  fail(ErrorCode::InvalidConfig, "unknown method '" + std::string(name) + "'");
}

BenchmarkSetup make_setup(const SetupConfig& setup, std::uint64_t seed) {
  if (setup.vocab_size < 2) fail(ErrorCode::InvalidConfig, "vocab_size >= 2");
  BenchmarkSetup out;
  out.teacher = make_synthetic_teacher(setup.vocab_size, setup.teacher_sharpness,
                                       derive_seed(seed, "teacher_model"));
  if (setup.architecture == Architecture::Tabular) {
    out.base = ModelParams::random_tabular(setup.vocab_size, setup.student_scale,
                                           derive_seed(seed, "base_student"));
    out.cross = ModelParams::random_tabular(setup.vocab_size, setup.student_scale,
                                            derive_seed(seed, "cross_student"));
  } else {
    out.base = ModelParams::random_transformer(setup.vocab_size, setup.dims, setup.output_scale,
                                               derive_seed(seed, "base_student"));
    out.cross = ModelParams::random_transformer(setup.vocab_size, setup.dims, setup.output_scale,
                                                derive_seed(seed, "cross_student"));
  }
  out.prompts = make_prompt_sets(setup.vocab_size, setup.n_prompts, setup.n_heldout,
                                 setup.prompt_len, derive_seed(seed, "prompts"));
  return out;
}

std::map<std::string, EvalResult> evaluate_model(const ModelParams& model,
                                                 const BenchmarkSetup& setup,
                                                 const TrainConfig& config,
                                                 const EvalConfig& eval) {
  const bool exact = model.architecture() == Architecture::Tabular && config.max_len <= 3 &&
                     model.vocab_size() <= 8;
  std::map<std::string, EvalResult> out;
  auto run_split = [&](const std::string& name, const std::vector<Tokens>& all) {
    const std::size_t n = std::min(all.size(), eval.max_prompts);
    const std::vector<Tokens> prompts(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(n));
    const std::uint64_t seed = derive_seed(config.seed, "eval_" + name);
    EvalResult r;
    r.kl_to_teacher = kl_to_teacher(model, setup.teacher, prompts,
                                    exact ? KlMode::Exact : KlMode::MonteCarlo,
                                    KlOptions{config.max_len, eval.mc_samples, seed})
                          .value;
    r.judge_score = judge_win_rate(model, setup.teacher, setup.teacher, prompts,
                                   JudgeOptions{config.max_len, 1.0, seed});
    r.n_prompts = n;
    r.seeds = {config.seed};
    out.emplace(name, std::move(r));
  };
  run_split("in_dist", setup.prompts.train);
  run_split("heldout", setup.prompts.heldout);
  return out;
}

std::vector<MethodRun> run_experiment(Method method, const SetupConfig& setup_config,
                                      const TrainConfig& config, const EvalConfig& eval) {
  config.validate();
  const BenchmarkSetup setup = make_setup(setup_config, config.seed);
  const BlackBoxTeacher teacher(setup.teacher);
  const std::vector<Tokens>& prompts = setup.prompts.train;

  MemorySampler sampler;
  std::vector<MethodRun> runs;
  switch (method) {
    case Method::Soda: runs.push_back(distill_soda(config, prompts, teacher, setup.base, &setup.cross)); break;
    case Method::SeqKd: runs.push_back(run_seqkd(config, prompts, teacher, setup.base)); break;
    case Method::Gad: runs.push_back(run_gad(config, prompts, teacher, setup.base)); break;
    case Method::Ablation: runs = run_ablation(config, prompts, teacher, setup.base, setup.cross); break;
  }
  const std::uint64_t peak = sampler.stop();
  for (MethodRun& run : runs) {
    run.report.peak_mem_bytes = peak;
    run.report.evals = evaluate_model(run.model, setup, config, eval);
  }
  return runs;
}

}  // namespace soda
