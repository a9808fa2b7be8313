// Generative adversarial distillation baseline: a student generator trained
// by group-baseline policy gradient against a Bradley-Terry discriminator.

#include <chrono>

#include "soda/error.hpp"
#include "soda/parallel.hpp"
#include "soda/pipeline.hpp"
#include "soda/rng.hpp"
#include "batching.hpp"

namespace soda {
namespace {

void discriminator_warmup(ModelParams& disc, const Dataset& teacher_data, const Dataset& snapshot,
                          const TrainConfig& config, MetricLog* log) {
  const int epochs = config.gad_warmup_epochs;
  if (epochs <= 0) return;
  const std::size_t n = teacher_data.size();
  const CosineSchedule schedule{config.lr_gad / config.gad_lr_ratio,
                                static_cast<std::size_t>(epochs) * detail::batches_per_epoch(n, config.batch_size)};
  GradientDescent opt(config.momentum);
  std::vector<SequenceExample> pos, neg;
  detail::for_each_batch(n, epochs, config.batch_size, derive_seed(config.seed, "disc_warmup_order"),
                   [&](int epoch, std::size_t step, std::span<const std::size_t> idx) {
                     pos.clear();
                     neg.clear();
                     for (std::size_t i : idx) {
                       pos.push_back(teacher_data.examples[i]);
                       neg.push_back(snapshot.examples[i]);
                     }
                     const LossAndGrad lg = bt_discriminator_batch(disc, pos, neg);
                     const double rate = schedule.at(step);
                     opt.step(disc, lg.grad, rate);
                     if (log != nullptr) {
                       log->watch("disc_warmup.loss", lg.loss);
                       log->record({"disc_warmup", epoch, step, lg.loss, std::nullopt,
                                    std::nullopt, l2_norm(lg.grad), rate});
                     }
                   });
}

}  // namespace

void gad_adversarial_phase(ModelParams& gen, ModelParams& disc, const Dataset& teacher_data,
                           const TrainConfig& config, CostCounters& costs, MetricLog* log,
                           const GadOptions& options) {
  config.validate();
  const std::size_t n = teacher_data.size();
  if (n == 0) fail(ErrorCode::InvalidInput, "adversarial phase needs teacher data");
  const std::size_t total = static_cast<std::size_t>(config.gad_epochs) * detail::batches_per_epoch(n, config.batch_size);
  const CosineSchedule gen_schedule{config.lr_gad, total};
  const CosineSchedule disc_schedule{config.lr_gad / config.gad_lr_ratio, total};
  GradientDescent gen_opt(config.momentum);
  GradientDescent disc_opt(config.momentum);
  const RolloutConfig rollout{config.rollouts, config.max_len, config.rollout_temperature};
  const auto k = static_cast<std::size_t>(config.rollouts);
  std::vector<PolicyGradientResult> results;
  std::vector<SequenceExample> pos, neg;

  detail::for_each_batch(
      n, config.gad_epochs, config.batch_size, derive_seed(config.seed, "gad_order"),
      [&](int epoch, std::size_t step, std::span<const std::size_t> idx) {
        results.assign(idx.size(), {});
        parallel_for(idx.size(), [&](std::size_t j) {
          const std::size_t i = idx[j];
          const std::uint64_t item = static_cast<std::uint64_t>(epoch) * n + i;
          results[j] = policy_gradient_step(gen, disc, teacher_data.examples[i].prompt, rollout,
                                            derive_seed(config.seed, "gad_rollout", item));
        });
        costs.student_generations += idx.size() * k;

        CompensatedSum sum(gen.size());
        double mean_score = 0.0;
        const double inv_b = 1.0 / static_cast<double>(idx.size());
        for (const PolicyGradientResult& r : results) {
          sum.add(r.grad, inv_b);
          for (double s : r.scores) mean_score += s * inv_b / static_cast<double>(k);
        }
        const GradientVector gen_grad = sum.result();
        const double gen_rate = gen_schedule.at(step);
        gen_opt.step(gen, gen_grad, gen_rate);
        const double gen_norm = l2_norm(gen_grad);
        if (log != nullptr) {
          log->watch("gad_gen.grad_norm", gen_norm);
          log->record({"gad_gen", epoch, step, -mean_score, std::nullopt, std::nullopt, gen_norm,
                       gen_rate});
        }
        if (options.freeze_discriminator) return;

        // The rollouts double as the discriminator's negatives.
        pos.clear();
        neg.clear();
        for (std::size_t j = 0; j < idx.size(); ++j) {
          const SequenceExample& t = teacher_data.examples[idx[j]];
          for (const Tokens& y : results[j].rollouts) {
            pos.push_back(t);
            neg.push_back(SequenceExample::make(t.prompt, y));
          }
        }
        const LossAndGrad lg = bt_discriminator_batch(disc, pos, neg);
        const double disc_rate = disc_schedule.at(step);
        disc_opt.step(disc, lg.grad, disc_rate);
        if (log != nullptr) {
          log->watch("gad_disc.loss", lg.loss);
          log->record({"gad_disc", epoch, step, lg.loss, std::nullopt, std::nullopt,
                       l2_norm(lg.grad), disc_rate});
        }
      });
}

MethodRun run_gad(const TrainConfig& config, const std::vector<Tokens>& prompts,
                  const BlackBoxTeacher& teacher, const ModelParams& base,
                  const GadOptions& options) {
  config.validate();
  const auto t0 = std::chrono::steady_clock::now();
  MethodRun run;
  RunReport& report = run.report;
  report.method = "gad";
  report.seed = config.seed;
  report.config = config;
  MetricLog log;

  CostCounters snapshot_costs;
  Dataset snapshot = take_snapshot(base, prompts, config, snapshot_costs).second;
  report.costs.snapshot_generations = snapshot_costs.student_generations;
  Dataset teacher_data = generate_teacher_data(teacher, prompts, config, report.costs);

  ModelParams disc = base;
  discriminator_warmup(disc, teacher_data, snapshot, config, &log);
  ModelParams gen =
      warmup(base, teacher_data, config, config.gad_warmup_epochs, "gad_warmup", &log).model;
  report.costs.discriminator_params_active = true;
  gad_adversarial_phase(gen, disc, teacher_data, config, report.costs, &log, options);

  run.model = std::move(gen);
  run.checkpoints.emplace("q0", base);
  run.checkpoints.emplace("q_gad", run.model);
  run.checkpoints.emplace("disc", std::move(disc));
  run.datasets.emplace("teacher", std::move(teacher_data));
  run.datasets.emplace("snapshot", std::move(snapshot));
  report.metrics = log.rows();
  report.instability_events = log.instability_events();
  report.costs.wall_clock_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  report.notes.push_back("discriminator warmup reuses the N snapshot pairs (snapshot_generations)");
  report.notes.push_back("student_generations counts N*E*K adversarial rollouts");
  return run;
}

}  // namespace soda
