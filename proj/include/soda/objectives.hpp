#pragma once

// Training losses and their analytic gradients: supervised fine-tuning on
// teacher text, DPO against a frozen reference, the implicit reward it
// induces, the Bradley-Terry discriminator loss and a group-baseline
// policy gradient for adversarial generators.

#include <cstdint>
#include <functional>
#include <span>
#include <string_view>
#include <vector>

#include "soda/lm.hpp"

namespace soda {

using GradientVector = std::vector<double>;

enum class ResponseSource { Teacher, BaseStudent, CrossStudent, Corrupted };

std::string_view source_name(ResponseSource source);
ResponseSource parse_source(std::string_view name);

struct PreferencePair {
  Tokens prompt;
  Tokens chosen;
  Tokens rejected;
  ResponseSource chosen_source = ResponseSource::Teacher;
  ResponseSource rejected_source = ResponseSource::BaseStudent;

  SequenceExample chosen_example() const { return SequenceExample::make(prompt, chosen); }
  SequenceExample rejected_example() const { return SequenceExample::make(prompt, rejected); }

  bool operator==(const PreferencePair&) const = default;
};

struct LossAndGrad {
  double loss = 0.0;
  GradientVector grad;
};

/// log(1 + e^z) without overflow; -log(sigmoid(z)) == softplus(-z).
double softplus(double z);
double sigmoid(double z);

/// grad += scale * d/dtheta log q(response | prompt); returns log q.
double accumulate_logprob_grad(const ModelParams& params, const SequenceExample& ex,
                               double scale, std::span<double> grad);

/// Negative mean response log-likelihood over the batch.
LossAndGrad sft_loss_and_grad(const ModelParams& params,
                              std::span<const SequenceExample> batch);

struct DpoDiagnostics {
  double margin = 0.0;           // beta * (chosen log-ratio - rejected log-ratio)
  double adaptive_weight = 0.5;  // sigmoid(-margin)
  double loss = 0.0;             // softplus(-margin)
};

DpoDiagnostics dpo_loss(const ModelParams& params, const ModelParams& ref,
                        const PreferencePair& pair, double beta);

struct DpoBatchResult {
  double loss = 0.0;
  double mean_margin = 0.0;
  double mean_weight = 0.0;
  GradientVector grad;
};

/// Mean DPO loss and gradient over the batch. Optional per-pair weights
/// turn it into a weighted mean (weights need not sum to one).
DpoBatchResult dpo_loss_and_grad(const ModelParams& params, const ModelParams& ref,
                                 std::span<const PreferencePair> batch, double beta,
                                 std::span<const double> weights = {});

GradientVector dpo_grad(const ModelParams& params, const ModelParams& ref,
                        std::span<const PreferencePair> batch, double beta);

/// beta * [log q_policy(y|x) - log q_ref(y|x)]; the per-prompt partition
/// term is not represented, so only same-prompt differences are meaningful.
double implicit_reward(const ModelParams& policy, const ModelParams& ref,
                       std::span<const Token> prompt, std::span<const Token> response,
                       double beta);

/// Sequence score of a discriminator sharing the student body: the output
/// logit of each realized response token, mean-pooled over the response.
double discriminator_score(const ModelParams& disc, const SequenceExample& ex);

/// Bradley-Terry loss softplus(-(D(teacher) - D(student))) and its gradient.
LossAndGrad bt_discriminator_loss(const ModelParams& disc, const SequenceExample& teacher_resp,
                                  const SequenceExample& student_resp);

/// Mean Bradley-Terry loss over aligned (teacher, student) pairs.
LossAndGrad bt_discriminator_batch(const ModelParams& disc,
                                   std::span<const SequenceExample> teacher_resps,
                                   std::span<const SequenceExample> student_resps);

struct RolloutConfig {
  int rollouts = 4;
  int max_len = 3;
  double temperature = 1.0;
};

struct PolicyGradientResult {
  GradientVector grad;
  std::vector<Tokens> rollouts;
  std::vector<double> scores;
  std::vector<double> advantages;
};

/// Samples K responses and returns -(1/K) sum_k A_k grad log q(y_k | x)
/// with A_k = D(y_k) - mean_j D(y_j). Descending it raises D on average.
PolicyGradientResult policy_gradient_step(const ModelParams& gen, const ModelParams& disc,
                                          std::span<const Token> prompt,
                                          const RolloutConfig& config, std::uint64_t seed);

struct FiniteDifferenceReport {
  double max_rel_error = 0.0;
  std::size_t worst_index = 0;
  std::vector<std::size_t> failing;
  std::size_t checked = 0;
  bool passed = true;
};

/// Central differences per coordinate, compared with `analytic` using
/// |a - n| / max(|a|, |n|, 1e-6).
FiniteDifferenceReport finite_difference_check(
    const std::function<double(std::span<const double>)>& loss,
    std::span<const double> theta, std::span<const double> analytic, double h,
    double tolerance);

FiniteDifferenceReport finite_difference_check(
    const std::function<LossAndGrad(const ModelParams&)>& loss_fn, const ModelParams& params,
    double h, double tolerance);

/// Neumaier-compensated vector sum; results do not depend on how the
/// summands were produced, only on the order they are added.
class CompensatedSum {
 public:
  explicit CompensatedSum(std::size_t n) : sum_(n, 0.0), comp_(n, 0.0) {}

  void add(std::span<const double> x, double scale = 1.0);
  GradientVector result() const;

 private:
  std::vector<double> sum_;
  std::vector<double> comp_;
};

struct CosineSchedule {
  double base_rate = 0.0;
  std::size_t total_steps = 1;

  double at(std::size_t step) const;
};

/// Plain gradient descent (optional heavy-ball momentum). Every step bumps
/// the model's version counter.
class GradientDescent {
 public:
  explicit GradientDescent(double momentum = 0.0) : momentum_(momentum) {}

  void step(ModelParams& params, std::span<const double> grad, double rate);

 private:
  double momentum_;
  std::vector<double> velocity_;
};

double l2_norm(std::span<const double> v);

}  // namespace soda
