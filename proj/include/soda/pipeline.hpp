#pragma once

// Distillation pipelines over a synthetic teacher: data generation, the
// static student snapshot, preference construction, SFT warmup, DPO, and
// the SeqKD / GAD baselines with generation-cost accounting.

#include <atomic>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "soda/eval.hpp"
#include "soda/lm.hpp"
#include "soda/objectives.hpp"

namespace soda {

struct TrainConfig {
  double beta = 0.1;
  int warmup_epochs = 3;
  int dpo_epochs = 1;
  int gad_epochs = 3;         // E
  int gad_warmup_epochs = 1;  // generator SFT + discriminator BT warmup
  int rollouts = 4;           // K
  double snapshot_temperature = 0.7;
  double teacher_temperature = 1.0;
  double rollout_temperature = 1.0;
  double corrupted_temperature = 3.0;
  double lr_sft = 0.5;
  double lr_dpo = 0.05;  // effective step is lr_dpo / beta
  double lr_gad = 0.5;   // generator policy-gradient step
  double gad_lr_ratio = 1.0;  // generator rate / discriminator rate
  double momentum = 0.0;
  int batch_size = 32;
  int max_len = 3;
  std::uint64_t seed = 0;
  ResponseSource rejection_source = ResponseSource::BaseStudent;

  /// Violated constraints as "field: must satisfy ..." (empty when valid).
  std::vector<std::string> problems() const;
  /// Throws InvalidConfig listing every violated constraint.
  void validate() const;
  bool operator==(const TrainConfig&) const = default;
};

struct CostCounters {
  std::uint64_t teacher_queries = 0;
  std::uint64_t student_generations = 0;
  std::uint64_t snapshot_generations = 0;  // GAD discriminator warmup, reported separately
  bool discriminator_params_active = false;
  double wall_clock_seconds = 0.0;
};

/// Teacher reachable only through sampling. Training code receives this,
/// never the parameters, so it cannot read logits or internals.
class BlackBoxTeacher {
 public:
  explicit BlackBoxTeacher(ModelParams params) : params_(std::move(params)) {}
  BlackBoxTeacher(const BlackBoxTeacher&) = delete;
  BlackBoxTeacher& operator=(const BlackBoxTeacher&) = delete;

  Tokens sample(std::span<const Token> prompt, double temperature, int max_len,
                std::uint64_t seed) const;
  int vocab_size() const { return params_.vocab_size(); }
  std::uint64_t queries() const { return queries_.load(); }

 private:
  ModelParams params_;
  mutable std::atomic<std::uint64_t> queries_{0};
};

/// Tabular teacher with logits sharpness * N(0, 1): low-entropy rows.
ModelParams make_synthetic_teacher(int vocab, double sharpness, std::uint64_t seed);

/// Random prompts of non-EOS tokens.
std::vector<Tokens> make_prompts(int vocab, std::size_t n, int prompt_len, std::uint64_t seed);

struct PromptSets {
  std::vector<Tokens> train;
  std::vector<Tokens> heldout;  // disjoint from train
};
PromptSets make_prompt_sets(int vocab, std::size_t n_train, std::size_t n_heldout,
                            int prompt_len, std::uint64_t seed);

/// Responses aligned with prompts, with the sampling seed of each item.
struct Dataset {
  std::vector<SequenceExample> examples;
  std::vector<std::uint64_t> seeds;
  ResponseSource source = ResponseSource::Teacher;
  std::size_t size() const { return examples.size(); }
  bool operator==(const Dataset&) const = default;
};

Dataset generate_teacher_data(const BlackBoxTeacher& teacher, const std::vector<Tokens>& prompts,
                              const TrainConfig& config, CostCounters& costs);

struct ManifestEntry {
  std::size_t prompt_index = 0;
  std::uint64_t seed = 0;
  double temperature = 0.0;
  bool operator==(const ManifestEntry&) const = default;
};

/// Frozen copy of the untouched base student and how its responses were drawn.
class Snapshot {
 public:
  Snapshot(ModelParams model, std::vector<ManifestEntry> manifest)
      : model_(std::move(model)), manifest_(std::move(manifest)) {}
  const ModelParams& model() const { return model_; }
  const std::vector<ManifestEntry>& manifest() const { return manifest_; }

 private:
  ModelParams model_;
  std::vector<ManifestEntry> manifest_;
};

/// One response per prompt from the base student at snapshot temperature.
/// Throws StaleBase unless base.version() == 0.
std::pair<Snapshot, Dataset> take_snapshot(const ModelParams& base,
                                           const std::vector<Tokens>& prompts,
                                           const TrainConfig& config, CostCounters& costs);

/// Replays a manifest against a model (no counters touched).
Dataset replay_manifest(const ModelParams& model, const std::vector<Tokens>& prompts,
                        const std::vector<ManifestEntry>& manifest, int max_len);

/// pair i = (x_i, chosen_i, rejected_i). Throws Alignment on length or
/// prompt mismatch.
std::vector<PreferencePair> build_pref_dataset(const Dataset& chosen, const Dataset& rejected);

/// Rejected responses for the ablation modes. CrossStudent needs `cross`
/// (else InvalidConfig); Corrupted samples q0 hot and truncates to max_len / 2.
Dataset make_rejection_source(ResponseSource mode, const TrainConfig& config,
                              const std::vector<Tokens>& prompts, const ModelParams& base,
                              const ModelParams* cross, CostCounters& costs);

struct MetricRow {
  std::string stage;
  int epoch = 0;
  std::size_t step = 0;  // running index within the run
  double loss = 0.0;
  std::optional<double> margin;
  std::optional<double> weight;
  double grad_norm = 0.0;
  double lr = 0.0;
  bool operator==(const MetricRow&) const = default;
};

/// Flags values above 10x the median of the previous (up to) 50 values.
class InstabilityDetector {
 public:
  explicit InstabilityDetector(std::size_t window = 50, double factor = 10.0,
                               std::size_t min_history = 5)
      : window_(window), factor_(factor), min_history_(min_history) {}
  bool push(double value);

 private:
  std::size_t window_;
  double factor_;
  std::size_t min_history_;
  std::vector<double> history_;
};

/// Append-only metric stream with per-series spike detection.
class MetricLog {
 public:
  void record(MetricRow row);
  /// Feeds the named series' detector; returns true on a flagged spike.
  bool watch(const std::string& series, double value);
  const std::vector<MetricRow>& rows() const { return rows_; }
  std::size_t instability_events() const { return events_; }

 private:
  std::vector<MetricRow> rows_;
  std::map<std::string, InstabilityDetector> detectors_;
  std::size_t events_ = 0;
};

struct WarmupResult {
  ModelParams model;
  std::vector<double> epoch_losses;  // example-weighted mean per epoch
};

/// Mini-batch SFT on teacher data with a cosine schedule. Zero epochs
/// returns an unchanged copy of the base.
WarmupResult warmup(const ModelParams& base, const Dataset& teacher_data,
                    const TrainConfig& config, int epochs, const std::string& stage,
                    MetricLog* log);
WarmupResult warmup(const ModelParams& base, const Dataset& teacher_data,
                    const TrainConfig& config);

/// DPO epochs from `init` against the frozen `ref`.
ModelParams dpo_train(const ModelParams& init, const ModelParams& ref,
                      const std::vector<PreferencePair>& pairs, const TrainConfig& config,
                      MetricLog* log);

struct RunReport {
  static constexpr int kSchemaVersion = 1;
  std::string method;
  std::string rejection_source;  // "" unless a preference method
  std::uint64_t seed = 0;
  TrainConfig config;
  std::vector<MetricRow> metrics;
  CostCounters costs;
  std::size_t instability_events = 0;
  std::map<std::string, EvalResult> evals;  // "in_dist", "heldout"
  std::uint64_t peak_mem_bytes = 0;
  std::vector<std::string> notes;
};

struct MethodRun {
  ModelParams model;
  RunReport report;
  std::map<std::string, ModelParams> checkpoints;  // stage tag -> params
  std::map<std::string, Dataset> datasets;         // "teacher", "rejected", ...
  std::vector<PreferencePair> preferences;
};

/// snapshot -> preference set -> warmup -> DPO with ref = q_w.
MethodRun distill_soda(const TrainConfig& config, const std::vector<Tokens>& prompts,
                       const BlackBoxTeacher& teacher, const ModelParams& base,
                       const ModelParams* cross = nullptr);

/// Warmup only.
MethodRun run_seqkd(const TrainConfig& config, const std::vector<Tokens>& prompts,
                    const BlackBoxTeacher& teacher, const ModelParams& base);

struct GadOptions {
  bool freeze_discriminator = false;
};

/// E epochs of alternating generator policy-gradient and discriminator BT
/// updates over all prompts; adds N * E * K student generations.
void gad_adversarial_phase(ModelParams& gen, ModelParams& disc, const Dataset& teacher_data,
                           const TrainConfig& config, CostCounters& costs, MetricLog* log,
                           const GadOptions& options = {});

/// Generator SFT warmup + discriminator BT warmup on snapshot pairs, then
/// the adversarial phase. The discriminator starts as a copy of the student.
MethodRun run_gad(const TrainConfig& config, const std::vector<Tokens>& prompts,
                  const BlackBoxTeacher& teacher, const ModelParams& base,
                  const GadOptions& options = {});

/// One SODA run per rejection source (BaseStudent, CrossStudent, Corrupted).
std::vector<MethodRun> run_ablation(const TrainConfig& config, const std::vector<Tokens>& prompts,
                                    const BlackBoxTeacher& teacher, const ModelParams& base,
                                    const ModelParams& cross);

// ---- experiment level ------------------------------------------------------

enum class Method { Soda, SeqKd, Gad, Ablation };
std::string_view method_name(Method method);
Method parse_method(std::string_view name);

struct SetupConfig {
  int vocab_size = 6;
  Architecture architecture = Architecture::Tabular;
  std::size_t n_prompts = 2000;
  std::size_t n_heldout = 200;
  int prompt_len = 6;
  double teacher_sharpness = 3.0;
  double student_scale = 1.0;  // tabular init logit scale
  TransformerDims dims{};
  double output_scale = 1.0;   // transformer output head scale
  bool operator==(const SetupConfig&) const = default;
};

struct EvalConfig {
  int mc_samples = 32;
  std::size_t max_prompts = 200;  // per split
  bool operator==(const EvalConfig&) const = default;
};

/// Teacher, base / cross students and prompt sets for one seed.
struct BenchmarkSetup {
  ModelParams teacher;
  ModelParams base;
  ModelParams cross;
  PromptSets prompts;
};
BenchmarkSetup make_setup(const SetupConfig& setup, std::uint64_t seed);

/// KL (exact when the enumeration budget allows) and judge score against
/// the teacher on both prompt splits.
std::map<std::string, EvalResult> evaluate_model(const ModelParams& model,
                                                 const BenchmarkSetup& setup,
                                                 const TrainConfig& config,
                                                 const EvalConfig& eval);

/// Builds the setup for `config.seed`, runs the method (timed, memory
/// sampled) and fills the evaluations.
std::vector<MethodRun> run_experiment(Method method, const SetupConfig& setup,
                                      const TrainConfig& config, const EvalConfig& eval);

}  // namespace soda
