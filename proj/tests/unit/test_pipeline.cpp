#include <algorithm>
#include <cmath>
#include <set>
#include <type_traits>

#include "doctest.h"
#include "oracles.hpp"
#include "soda/error.hpp"
#include "soda/eval.hpp"
#include "soda/io.hpp"
#include "soda/parallel.hpp"
#include "soda/pipeline.hpp"
#include "soda/rng.hpp"

using namespace soda;

// The training path can only sample from the teacher.
template <typename T>
concept ExposesParams = requires(const T& t) { t.params(); };
template <typename T>
concept ExposesValues = requires(const T& t) { t.values(); };
template <typename T>
concept ExposesLogits = requires(const T& t) { t.logits(); };
static_assert(!ExposesParams<BlackBoxTeacher>);
static_assert(!ExposesValues<BlackBoxTeacher>);
static_assert(!ExposesLogits<BlackBoxTeacher>);
static_assert(!std::is_copy_constructible_v<BlackBoxTeacher>);
static_assert(!std::is_convertible_v<ModelParams, const BlackBoxTeacher&>);
static_assert(requires(const BlackBoxTeacher& t, Tokens p) { t.sample(p, 1.0, 3, 0ull); });

namespace {

ErrorCode code_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected soda::Error");
  return ErrorCode::Io;
}

double exact_kl(const ModelParams& q, const ModelParams& p, const std::vector<Tokens>& prompts,
                int max_len = 3) {
  return kl_to_teacher(q, p, prompts, KlMode::Exact, KlOptions{max_len, 1, 0}).value;
}

struct Small {
  BenchmarkSetup setup;
  TrainConfig config;
};

Small small_setup(std::uint64_t seed, std::size_t n = 300) {
  SetupConfig sc;
  sc.n_prompts = n;
  sc.n_heldout = 100;
  Small s{make_setup(sc, seed), TrainConfig{}};
  s.config.seed = seed;
  return s;
}

double row_entropy(std::span<const double> logits) {
  const auto p = oracle::softmax(std::vector<double>(logits.begin(), logits.end()));
  long double h = 0;
  for (auto v : p) h -= v > 0 ? v * std::log(v) : 0;
  return static_cast<double>(h);
}

}  // namespace

TEST_CASE("synthetic teacher is seeded and sharp") {
  CHECK(make_synthetic_teacher(6, 3.0, 4) == make_synthetic_teacher(6, 3.0, 4));
  CHECK_FALSE(make_synthetic_teacher(6, 3.0, 4) == make_synthetic_teacher(6, 3.0, 5));
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    double previous = std::log(6.0);
    for (double sharp : {3.0, 5.0}) {
      const ModelParams t = make_synthetic_teacher(6, sharp, seed);
      double mean = 0;
      for (Token r = 0; r < 6; ++r) mean += row_entropy(t.tabular_row(r)) / 6.0;
      CHECK(mean < 0.6 * std::log(6.0));
      CHECK(mean < previous);
      previous = mean;
    }
  }
}

TEST_CASE("prompt sets are disjoint, sized and EOS-free") {
  const PromptSets s = make_prompt_sets(6, 500, 100, 6, 3);
  CHECK(s.train.size() == 500);
  CHECK(s.heldout.size() == 100);
  const std::set<Tokens> train(s.train.begin(), s.train.end());
  for (const Tokens& p : s.heldout) CHECK(train.count(p) == 0);
  for (const Tokens& p : s.train) {
    CHECK(p.size() == 6);
    for (Token t : p) CHECK((t >= 0 && t < 5));
  }
  CHECK(make_prompts(6, 10, 4, 1) == make_prompts(6, 10, 4, 1));
  CHECK(code_of([] { make_prompt_sets(3, 3, 2, 1, 0); }) == ErrorCode::InvalidConfig);
}

TEST_CASE("teacher data: determinism, termination, counters, capability gap") {
  Small s = small_setup(2);
  const BlackBoxTeacher teacher(s.setup.teacher);
  CostCounters costs;
  const Dataset a = generate_teacher_data(teacher, s.setup.prompts.train, s.config, costs);
  CHECK(costs.teacher_queries == 300);
  CHECK(teacher.queries() == 300);
  CostCounters c2;
  CHECK(a == generate_teacher_data(teacher, s.setup.prompts.train, s.config, c2));
  CHECK(a.size() == 300);
  std::vector<double> gap;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const SequenceExample& ex = a.examples[i];
    CHECK(ex.prompt == s.setup.prompts.train[i]);
    CHECK(ex.response.size() <= 3);
    CHECK((ex.response.back() == 5 || ex.response.size() == 3));
    CHECK(a.seeds[i] == derive_seed(2, "teacher", i));
    gap.push_back(logprob_sequence(s.setup.teacher, ex) - logprob_sequence(s.setup.base, ex));
  }
  CHECK(quantile(gap, 0.5) > 0.0);
}

TEST_CASE("snapshot: counters, manifest replay, staleness") {
  Small s = small_setup(3);
  CostCounters costs;
  const auto [snap, data] = take_snapshot(s.setup.base, s.setup.prompts.train, s.config, costs);
  CHECK(costs.student_generations == 300);
  CHECK(snap.manifest().size() == 300);
  CHECK(snap.model() == s.setup.base);
  for (const ManifestEntry& m : snap.manifest()) CHECK(m.temperature == 0.7);
  const Dataset replay = replay_manifest(snap.model(), s.setup.prompts.train, snap.manifest(), 3);
  CHECK(dataset_to_jsonl(replay) == dataset_to_jsonl(data));
  CostCounters c2;
  CHECK(take_snapshot(s.setup.base, s.setup.prompts.train, s.config, c2).second == data);

  ModelParams trained = s.setup.base;
  GradientDescent opt;
  opt.step(trained, std::vector<double>(trained.size(), 0.0), 0.1);
  CHECK(code_of([&] { take_snapshot(trained, s.setup.prompts.train, s.config, c2); }) ==
        ErrorCode::StaleBase);
  const BlackBoxTeacher teacher(s.setup.teacher);
  CHECK(code_of([&] { distill_soda(s.config, s.setup.prompts.train, teacher, trained); }) ==
        ErrorCode::StaleBase);
}

TEST_CASE("preference dataset") {
  Small s = small_setup(4);
  const BlackBoxTeacher teacher(s.setup.teacher);
  CostCounters costs;
  const Dataset t = generate_teacher_data(teacher, s.setup.prompts.train, s.config, costs);
  const Dataset r = take_snapshot(s.setup.base, s.setup.prompts.train, s.config, costs).second;
  const auto pairs = build_pref_dataset(t, r);
  CHECK(pairs.size() == 300);
  for (const PreferencePair& p : pairs) {
    CHECK(p.chosen_source == ResponseSource::Teacher);
    CHECK(p.rejected_source == ResponseSource::BaseStudent);
  }
  Rng rng(9);
  for (int k = 0; k < 10; ++k) {
    const std::size_t i = rng.below(pairs.size());
    CHECK(pairs[i].prompt == t.examples[i].prompt);
    CHECK(pairs[i].chosen == t.examples[i].response);
    CHECK(pairs[i].rejected == r.examples[i].response);
  }
  Dataset shorter = r;
  shorter.examples.pop_back();
  shorter.seeds.pop_back();
  CHECK(code_of([&] { build_pref_dataset(t, shorter); }) == ErrorCode::Alignment);
  Dataset shuffled = r;
  std::swap(shuffled.examples[0], shuffled.examples[1]);
  if (shuffled.examples[0].prompt != t.examples[0].prompt) {
    CHECK(code_of([&] { build_pref_dataset(t, shuffled); }) == ErrorCode::Alignment);
  }
}

TEST_CASE("rejection sources") {
  Small s = small_setup(5);
  CostCounters costs;
  const auto& prompts = s.setup.prompts.train;
  const Dataset base = make_rejection_source(ResponseSource::BaseStudent, s.config, prompts,
                                             s.setup.base, nullptr, costs);
  const Dataset cross = make_rejection_source(ResponseSource::CrossStudent, s.config, prompts,
                                              s.setup.base, &s.setup.cross, costs);
  const Dataset bad = make_rejection_source(ResponseSource::Corrupted, s.config, prompts,
                                            s.setup.base, nullptr, costs);
  CHECK(costs.student_generations == 900);
  CHECK(base.source == ResponseSource::BaseStudent);
  CHECK(cross.source == ResponseSource::CrossStudent);
  CHECK(bad.source == ResponseSource::Corrupted);
  CHECK(sha256_hex(dataset_to_jsonl(base)) != sha256_hex(dataset_to_jsonl(cross)));
  for (const SequenceExample& ex : bad.examples) CHECK(ex.response.size() <= 1);
  CHECK(code_of([&] {
          make_rejection_source(ResponseSource::CrossStudent, s.config, prompts, s.setup.base,
                                nullptr, costs);
        }) == ErrorCode::InvalidConfig);
  CHECK(code_of([&] {
          make_rejection_source(ResponseSource::Teacher, s.config, prompts, s.setup.base, nullptr,
                                costs);
        }) == ErrorCode::InvalidConfig);

  TrainConfig longer = s.config;
  longer.max_len = 6;
  const Dataset bad6 = make_rejection_source(ResponseSource::Corrupted, longer, prompts,
                                             s.setup.base, nullptr, costs);
  for (const SequenceExample& ex : bad6.examples) CHECK(ex.response.size() <= 3);
}

TEST_CASE("warmup: zero epochs, monotone epochs, self-distillation null test, divergence") {
  Small s = small_setup(6, 2000);
  const BlackBoxTeacher teacher(s.setup.teacher);
  CostCounters costs;
  const Dataset data = generate_teacher_data(teacher, s.setup.prompts.train, s.config, costs);

  const WarmupResult zero = warmup(s.setup.base, data, s.config, 0, "warmup", nullptr);
  CHECK(zero.model == s.setup.base);
  CHECK(zero.model.version() == 0);
  CHECK(zero.epoch_losses.empty());

  const WarmupResult w = warmup(s.setup.base, data, s.config);
  REQUIRE(w.epoch_losses.size() == 3);
  CHECK(w.epoch_losses[2] <= w.epoch_losses[0]);
  CHECK(w.epoch_losses[1] <= w.epoch_losses[0]);
  CHECK(w.model.version() > 0);

  // Student trained on its own samples stays put.
  const BlackBoxTeacher self(s.setup.base);
  TrainConfig cfg = s.config;
  const Dataset own = generate_teacher_data(self, s.setup.prompts.train, cfg, costs);
  const WarmupResult ws = warmup(s.setup.base, own, cfg);
  CHECK(exact_kl(ws.model, s.setup.base, s.setup.prompts.heldout) < 0.05);

  TrainConfig wild = s.config;
  wild.lr_sft = 1e308;
  CHECK(code_of([&] { warmup(s.setup.base, data, wild); }) == ErrorCode::NumericalError);
  Dataset empty;
  CHECK(code_of([&] { warmup(s.setup.base, empty, s.config); }) == ErrorCode::InvalidInput);
}

TEST_CASE("SODA: costs, checkpoints, KL anchor at large beta") {
  Small s = small_setup(7, 500);
  const BlackBoxTeacher teacher(s.setup.teacher);
  const MethodRun run = distill_soda(s.config, s.setup.prompts.train, teacher, s.setup.base);
  CHECK(run.report.costs.student_generations == 500);
  CHECK(run.report.costs.teacher_queries == 500);
  CHECK(run.report.method == "soda");
  CHECK(run.report.rejection_source == "base_student");
  CHECK(run.preferences.size() == 500);
  CHECK(run.checkpoints.count("q0") == 1);
  CHECK(run.checkpoints.count("q_w") == 1);
  CHECK(run.checkpoints.at("q_soda") == run.model);
  CHECK(run.checkpoints.at("q0") == s.setup.base);
  std::size_t dpo_rows = 0;
  for (const MetricRow& r : run.report.metrics) {
    if (r.stage == "dpo") {
      ++dpo_rows;
      REQUIRE(r.margin.has_value());
      REQUIRE(r.weight.has_value());
      CHECK(*r.weight > 0.0);
      CHECK(*r.weight < 1.0);
    }
  }
  CHECK(dpo_rows == (500 + 31) / 32);

  TrainConfig anchored = s.config;
  anchored.beta = 100.0;
  const MethodRun a = distill_soda(anchored, s.setup.prompts.train, teacher, s.setup.base);
  CHECK(exact_kl(a.model, a.checkpoints.at("q_w"), s.setup.prompts.heldout) < 0.01);
}

TEST_CASE("SODA improves on its warmup on most seeds") {
  int improved = 0;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    Small s = small_setup(seed, 2000);
    const BlackBoxTeacher teacher(s.setup.teacher);
    const MethodRun run = distill_soda(s.config, s.setup.prompts.train, teacher, s.setup.base);
    const double kl_soda = exact_kl(run.model, s.setup.teacher, s.setup.prompts.heldout);
    const double kl_w = exact_kl(run.checkpoints.at("q_w"), s.setup.teacher, s.setup.prompts.heldout);
    if (kl_soda <= kl_w) ++improved;
  }
  CHECK(improved >= 4);
}

TEST_CASE("SeqKD: equals warmup, zero student generations, beats the base") {
  std::vector<double> kl_seqkd, kl_base;
  for (std::uint64_t seed = 1; seed <= 3; ++seed) {
    Small s = small_setup(seed, 500);
    const BlackBoxTeacher teacher(s.setup.teacher);
    const MethodRun run = run_seqkd(s.config, s.setup.prompts.train, teacher, s.setup.base);
    CHECK(run.report.costs.student_generations == 0);
    CHECK(run.report.costs.teacher_queries == 500);
    CostCounters costs;
    const Dataset data = generate_teacher_data(teacher, s.setup.prompts.train, s.config, costs);
    const WarmupResult w = warmup(s.setup.base, data, s.config);
    CHECK(w.model == run.model);
    CHECK(w.model.values().size() == run.model.values().size());
    CHECK(std::equal(w.model.values().begin(), w.model.values().end(), run.model.values().begin()));
    kl_seqkd.push_back(exact_kl(run.model, s.setup.teacher, s.setup.prompts.heldout));
    kl_base.push_back(exact_kl(s.setup.base, s.setup.teacher, s.setup.prompts.heldout));
  }
  CHECK(quantile(kl_seqkd, 0.5) < quantile(kl_base, 0.5));
}

TEST_CASE("GAD: cost identity, frozen zero discriminator leaves the generator alone") {
  Small s = small_setup(8, 200);
  s.config.gad_epochs = 2;
  s.config.rollouts = 4;
  const BlackBoxTeacher teacher(s.setup.teacher);
  const MethodRun run = run_gad(s.config, s.setup.prompts.train, teacher, s.setup.base);
  CHECK(run.report.costs.student_generations == 200u * 2u * 4u);
  CHECK(run.report.costs.snapshot_generations == 200);
  CHECK(run.report.costs.discriminator_params_active);
  CHECK(run.checkpoints.count("disc") == 1);
  CHECK(run.checkpoints.at("q_gad") == run.model);

  CostCounters costs;
  const Dataset data = generate_teacher_data(teacher, s.setup.prompts.train, s.config, costs);
  ModelParams gen = s.setup.base;
  ModelParams disc = ModelParams::tabular(6, std::vector<double>(36, 0.0));
  const ModelParams gen_before = gen;
  CostCounters gad_costs;
  gad_adversarial_phase(gen, disc, data, s.config, gad_costs, nullptr, GadOptions{true});
  CHECK(std::equal(gen.values().begin(), gen.values().end(), gen_before.values().begin()));
  CHECK(gad_costs.student_generations == 200u * 2u * 4u);
  for (double v : disc.values()) CHECK(v == 0.0);

  TrainConfig k1 = s.config;
  k1.rollouts = 1;
  CHECK(code_of([&] { run_gad(k1, s.setup.prompts.train, teacher, s.setup.base); }) ==
        ErrorCode::InvalidConfig);
}

TEST_CASE("ablation yields one model per rejection source") {
  Small s = small_setup(9, 200);
  const BlackBoxTeacher teacher(s.setup.teacher);
  const auto runs = run_ablation(s.config, s.setup.prompts.train, teacher, s.setup.base, s.setup.cross);
  REQUIRE(runs.size() == 3);
  CHECK(runs[0].report.rejection_source == "base_student");
  CHECK(runs[1].report.rejection_source == "cross_student");
  CHECK(runs[2].report.rejection_source == "corrupted");
  for (const MethodRun& r : runs) {
    CHECK(r.report.method == "ablation");
    CHECK(r.report.costs.student_generations == 200);
  }
  CHECK_FALSE(runs[0].model == runs[2].model);
}

TEST_CASE("runs are bit-identical across worker counts") {
  Small s = small_setup(10, 300);
  const BlackBoxTeacher teacher(s.setup.teacher);
  set_worker_threads(1);
  const MethodRun a = distill_soda(s.config, s.setup.prompts.train, teacher, s.setup.base);
  set_worker_threads(3);
  const MethodRun b = distill_soda(s.config, s.setup.prompts.train, teacher, s.setup.base);
  set_worker_threads(1);
  CHECK(a.report.metrics == b.report.metrics);
  CHECK(a.model == b.model);
  CHECK(std::equal(a.model.values().begin(), a.model.values().end(), b.model.values().begin()));
}

TEST_CASE("instability detector") {
  InstabilityDetector d(50, 10.0, 5);
  for (int i = 0; i < 5; ++i) CHECK_FALSE(d.push(1.0));
  CHECK_FALSE(d.push(9.9));
  CHECK(d.push(10.5));
  CHECK_FALSE(d.push(1.0));

  InstabilityDetector early(50, 10.0, 5);
  CHECK_FALSE(early.push(1.0));
  CHECK_FALSE(early.push(1000.0));

  MetricLog log;
  for (int i = 0; i < 10; ++i) log.watch("a", 1.0);
  CHECK(log.watch("a", 100.0));
  CHECK_FALSE(log.watch("b", 100.0));
  CHECK(log.instability_events() == 1);
}

TEST_CASE("train config validation lists every problem") {
  TrainConfig c;
  CHECK(c.problems().empty());
  c.beta = 0.0;
  c.rollouts = 1;
  c.lr_sft = -1.0;
  const auto p = c.problems();
  CHECK(p.size() == 3);
  try {
    c.validate();
    FAIL("expected InvalidConfig");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::InvalidConfig);
    CHECK(std::string(e.what()).find("beta > 0") != std::string::npos);
    CHECK(std::string(e.what()).find("rollouts") != std::string::npos);
  }
  CHECK(parse_method("gad") == Method::Gad);
  CHECK(method_name(Method::Ablation) == "ablation");
  CHECK(code_of([] { parse_method("ppo"); }) == ErrorCode::InvalidConfig);
}

TEST_CASE("experiment runner fills both evaluation splits") {
  SetupConfig sc;
  sc.n_prompts = 200;
  sc.n_heldout = 50;
  TrainConfig tc;
  tc.seed = 3;
  const auto runs = run_experiment(Method::SeqKd, sc, tc, EvalConfig{});
  REQUIRE(runs.size() == 1);
  const RunReport& r = runs[0].report;
  CHECK(r.evals.at("in_dist").n_prompts == 200);
  CHECK(r.evals.at("heldout").n_prompts == 50);
  CHECK(r.evals.at("heldout").kl_to_teacher >= 0.0);
  CHECK(r.evals.at("heldout").judge_score >= 0.0);
  CHECK(r.evals.at("heldout").judge_score <= 100.0);
  CHECK(r.peak_mem_bytes > 0);
  CHECK(run_experiment(Method::Ablation, sc, tc, EvalConfig{}).size() == 3);
}
