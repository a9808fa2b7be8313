#include <cmath>

#include "soda/error.hpp"
#include "soda/forward.hpp"
#include "soda/objectives.hpp"
#include "soda/parallel.hpp"
#include "soda/rng.hpp"

namespace soda {

std::string_view source_name(ResponseSource source) {
  switch (source) {
    case ResponseSource::Teacher: return "teacher";
    case ResponseSource::BaseStudent: return "base_student";
    case ResponseSource::CrossStudent: return "cross_student";
    case ResponseSource::Corrupted: return "corrupted";
  }
  return "unknown";
}

ResponseSource parse_source(std::string_view name) {
  if (name == "teacher") return ResponseSource::Teacher;
  if (name == "base_student") return ResponseSource::BaseStudent;
  if (name == "cross_student") return ResponseSource::CrossStudent;
  if (name == "corrupted") return ResponseSource::Corrupted;
  fail(ErrorCode::InvalidConfig, "unknown response source '" + std::string(name) + "'");
}

double softplus(double z) {
  if (z > 0.0) return z + std::log1p(std::exp(-z));
  return std::log1p(std::exp(z));
}

double sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

namespace {

void check_finite_loss(double value, const char* what) {
  if (!std::isfinite(value)) {
    fail(ErrorCode::NumericalError, std::string(what) + " is not finite");
  }
}

// A response's log-likelihood with the forward pass retained, so the
// gradient can be scaled by a weight known only after the forward pass.
class ResponseLogProb {
 public:
  ResponseLogProb(const ModelParams& params, const SequenceExample& ex)
      : inputs_(prepare(params, ex)),
        fwd_(params, inputs_),
        vocab_(static_cast<std::size_t>(params.vocab_size())) {
    dlogits_.assign(inputs_.size() * vocab_, 0.0);
    std::vector<double> lp(vocab_);
    for (std::size_t i = 0; i < ex.response.size(); ++i) {
      const std::size_t pos = ex.prompt.size() - 1 + i;
      log_softmax(fwd_.logits(pos), lp);
      const auto target = static_cast<std::size_t>(ex.response[i]);
      value_ += lp[target];
      double* d = &dlogits_[pos * vocab_];
      for (std::size_t c = 0; c < vocab_; ++c) d[c] = -std::exp(lp[c]);
      d[target] += 1.0;
    }
  }

  double value() const { return value_; }

  void accumulate_grad(double scale, std::span<double> grad) const {
    if (scale == 0.0) return;
    if (scale == 1.0) {
      fwd_.backward(dlogits_, grad);
      return;
    }
    std::vector<double> scaled = dlogits_;
    for (double& x : scaled) x *= scale;
    fwd_.backward(scaled, grad);
  }

 private:
  static Tokens prepare(const ModelParams& params, const SequenceExample& ex) {
    ex.validate(params.vocab());
    Tokens all = ex.tokens();
    all.pop_back();
    return all;
  }

  Tokens inputs_;
  SequenceForward fwd_;
  std::size_t vocab_;
  std::vector<double> dlogits_;
  double value_ = 0.0;
};

// Mean output logit of the realized response tokens.
class ResponseScore {
 public:
  ResponseScore(const ModelParams& disc, const SequenceExample& ex)
      : inputs_(prepare(disc, ex)),
        fwd_(disc, inputs_),
        vocab_(static_cast<std::size_t>(disc.vocab_size())) {
    const double inv_len = 1.0 / static_cast<double>(ex.response.size());
    dlogits_.assign(inputs_.size() * vocab_, 0.0);
    for (std::size_t i = 0; i < ex.response.size(); ++i) {
      const std::size_t pos = ex.prompt.size() - 1 + i;
      const auto target = static_cast<std::size_t>(ex.response[i]);
      value_ += fwd_.logits(pos)[target] * inv_len;
      dlogits_[pos * vocab_ + target] += inv_len;
    }
  }

  double value() const { return value_; }

  void accumulate_grad(double scale, std::span<double> grad) const {
    if (scale == 0.0) return;
    std::vector<double> scaled = dlogits_;
    for (double& x : scaled) x *= scale;
    fwd_.backward(scaled, grad);
  }

 private:
  static Tokens prepare(const ModelParams& params, const SequenceExample& ex) {
    ex.validate(params.vocab());
    Tokens all = ex.tokens();
    all.pop_back();
    return all;
  }

  Tokens inputs_;
  SequenceForward fwd_;
  std::size_t vocab_;
  std::vector<double> dlogits_;
  double value_ = 0.0;
};

void check_beta(double beta) {
  if (!(beta > 0.0) || !std::isfinite(beta)) {
    fail(ErrorCode::InvalidConfig, "beta must satisfy beta > 0");
  }
}

void check_same_family(const ModelParams& a, const ModelParams& b) {
  if (a.architecture() != b.architecture() || a.size() != b.size() ||
      a.vocab_size() != b.vocab_size()) {
    fail(ErrorCode::UnsupportedArchitecture, "policy and reference must share a layout");
  }
  if (!b.finite()) fail(ErrorCode::NumericalError, "reference parameters are not finite");
}

}  // namespace

double accumulate_logprob_grad(const ModelParams& params, const SequenceExample& ex,
                               double scale, std::span<double> grad) {
  const ResponseLogProb lp(params, ex);
  lp.accumulate_grad(scale, grad);
  return lp.value();
}

LossAndGrad sft_loss_and_grad(const ModelParams& params,
                              std::span<const SequenceExample> batch) {
  if (batch.empty()) fail(ErrorCode::InvalidInput, "SFT batch must be non-empty");
  const std::size_t n = batch.size();
  const double scale = -1.0 / static_cast<double>(n);
  std::vector<GradientVector> parts(n);
  std::vector<double> logprobs(n);
  parallel_for(n, [&](std::size_t i) {
    parts[i].assign(params.size(), 0.0);
    logprobs[i] = accumulate_logprob_grad(params, batch[i], scale, parts[i]);
  });
  CompensatedSum total(params.size());
  double loss = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    total.add(parts[i]);
    loss -= logprobs[i];
  }
  LossAndGrad out{loss / static_cast<double>(n), total.result()};
  check_finite_loss(out.loss, "SFT loss");
  return out;
}

DpoDiagnostics dpo_loss(const ModelParams& params, const ModelParams& ref,
                        const PreferencePair& pair, double beta) {
  check_beta(beta);
  check_same_family(params, ref);
  const SequenceExample chosen = pair.chosen_example();
  const SequenceExample rejected = pair.rejected_example();
  const double chosen_ratio = logprob_sequence(params, chosen) - logprob_sequence(ref, chosen);
  const double rejected_ratio =
      logprob_sequence(params, rejected) - logprob_sequence(ref, rejected);
  DpoDiagnostics d;
  d.margin = beta * (chosen_ratio - rejected_ratio);
  d.adaptive_weight = sigmoid(-d.margin);
  d.loss = softplus(-d.margin);
  check_finite_loss(d.loss, "DPO loss");
  return d;
}

DpoBatchResult dpo_loss_and_grad(const ModelParams& params, const ModelParams& ref,
                                 std::span<const PreferencePair> batch, double beta,
                                 std::span<const double> weights) {
  check_beta(beta);
  check_same_family(params, ref);
  if (batch.empty()) fail(ErrorCode::InvalidInput, "DPO batch must be non-empty");
  if (!weights.empty() && weights.size() != batch.size()) {
    fail(ErrorCode::InvalidInput, "DPO weights must align with the batch");
  }
  const std::size_t n = batch.size();
  double weight_total = 0.0;
  for (std::size_t i = 0; i < n; ++i) weight_total += weights.empty() ? 1.0 : weights[i];
  if (!(weight_total > 0.0)) fail(ErrorCode::InvalidInput, "DPO weights must sum to > 0");

  std::vector<GradientVector> parts(n);
  std::vector<DpoDiagnostics> diags(n);
  parallel_for(n, [&](std::size_t i) {
    const PreferencePair& pair = batch[i];
    const SequenceExample chosen = pair.chosen_example();
    const SequenceExample rejected = pair.rejected_example();
    const ResponseLogProb pos(params, chosen);
    const ResponseLogProb neg(params, rejected);
    const double ratio_pos = pos.value() - logprob_sequence(ref, chosen);
    const double ratio_neg = neg.value() - logprob_sequence(ref, rejected);
    DpoDiagnostics& d = diags[i];
    d.margin = beta * (ratio_pos - ratio_neg);
    d.adaptive_weight = sigmoid(-d.margin);
    d.loss = softplus(-d.margin);
    // dL/dtheta = -beta * sigmoid(-margin) * (grad log q(y+) - grad log q(y-))
    const double w = (weights.empty() ? 1.0 : weights[i]) / weight_total;
    const double coeff = -beta * d.adaptive_weight * w;
    parts[i].assign(params.size(), 0.0);
    pos.accumulate_grad(coeff, parts[i]);
    neg.accumulate_grad(-coeff, parts[i]);
  });

  DpoBatchResult out;
  CompensatedSum total(params.size());
  for (std::size_t i = 0; i < n; ++i) {
    const double w = (weights.empty() ? 1.0 : weights[i]) / weight_total;
    total.add(parts[i]);
    out.loss += w * diags[i].loss;
    out.mean_margin += w * diags[i].margin;
    out.mean_weight += w * diags[i].adaptive_weight;
  }
  out.grad = total.result();
  check_finite_loss(out.loss, "DPO loss");
  return out;
}

GradientVector dpo_grad(const ModelParams& params, const ModelParams& ref,
                        std::span<const PreferencePair> batch, double beta) {
  return dpo_loss_and_grad(params, ref, batch, beta).grad;
}

double implicit_reward(const ModelParams& policy, const ModelParams& ref,
                       std::span<const Token> prompt, std::span<const Token> response,
                       double beta) {
  check_beta(beta);
  check_same_family(policy, ref);
  const SequenceExample ex = SequenceExample::make(Tokens(prompt.begin(), prompt.end()),
                                                   Tokens(response.begin(), response.end()));
  return beta * (logprob_sequence(policy, ex) - logprob_sequence(ref, ex));
}

double discriminator_score(const ModelParams& disc, const SequenceExample& ex) {
  return ResponseScore(disc, ex).value();
}

LossAndGrad bt_discriminator_loss(const ModelParams& disc, const SequenceExample& teacher_resp,
                                  const SequenceExample& student_resp) {
  const ResponseScore teacher(disc, teacher_resp);
  const ResponseScore student(disc, student_resp);
  const double delta = teacher.value() - student.value();
  LossAndGrad out;
  out.loss = softplus(-delta);
  check_finite_loss(out.loss, "Bradley-Terry loss");
  out.grad.assign(disc.size(), 0.0);
  const double coeff = -sigmoid(-delta);
  teacher.accumulate_grad(coeff, out.grad);
  student.accumulate_grad(-coeff, out.grad);
  return out;
}

LossAndGrad bt_discriminator_batch(const ModelParams& disc,
                                   std::span<const SequenceExample> teacher_resps,
                                   std::span<const SequenceExample> student_resps) {
  if (teacher_resps.empty() || teacher_resps.size() != student_resps.size()) {
    fail(ErrorCode::InvalidInput, "discriminator batch must be non-empty and aligned");
  }
  const std::size_t n = teacher_resps.size();
  std::vector<LossAndGrad> parts(n);
  parallel_for(n, [&](std::size_t i) {
    parts[i] = bt_discriminator_loss(disc, teacher_resps[i], student_resps[i]);
  });
  LossAndGrad out;
  CompensatedSum total(disc.size());
  const double inv_n = 1.0 / static_cast<double>(n);
  for (const LossAndGrad& p : parts) {
    out.loss += p.loss * inv_n;
    total.add(p.grad, inv_n);
  }
  out.grad = total.result();
  return out;
}

PolicyGradientResult policy_gradient_step(const ModelParams& gen, const ModelParams& disc,
                                          std::span<const Token> prompt,
                                          const RolloutConfig& config, std::uint64_t seed) {
  if (config.rollouts < 2) {
    fail(ErrorCode::InvalidConfig, "policy gradient needs K >= 2 rollouts for a baseline");
  }
  const auto k = static_cast<std::size_t>(config.rollouts);
  PolicyGradientResult out;
  out.rollouts.resize(k);
  out.scores.resize(k);
  const Tokens prompt_tokens(prompt.begin(), prompt.end());
  for (std::size_t j = 0; j < k; ++j) {
    out.rollouts[j] = sample_response(gen, prompt, config.temperature, config.max_len,
                                      derive_seed(seed, "rollout", j));
    out.scores[j] =
        discriminator_score(disc, SequenceExample::make(prompt_tokens, out.rollouts[j]));
  }
  // Mean taken relative to the first score so identical scores give
  // advantages of exactly zero.
  double shift = 0.0;
  for (double s : out.scores) shift += s - out.scores[0];
  const double baseline = out.scores[0] + shift / static_cast<double>(k);
  out.advantages.resize(k);
  double running = 0.0;
  for (std::size_t j = 0; j + 1 < k; ++j) {
    out.advantages[j] = out.scores[j] - baseline;
    running += out.advantages[j];
  }
  // Last advantage closes the sum, so a left-to-right sum is exactly zero.
  out.advantages[k - 1] = -running;

  CompensatedSum total(gen.size());
  GradientVector part(gen.size());
  const double inv_k = 1.0 / static_cast<double>(k);
  for (std::size_t j = 0; j < k; ++j) {
    if (out.advantages[j] == 0.0) continue;
    std::fill(part.begin(), part.end(), 0.0);
    accumulate_logprob_grad(gen, SequenceExample::make(prompt_tokens, out.rollouts[j]),
                            -out.advantages[j] * inv_k, part);
    total.add(part);
  }
  out.grad = total.result();
  return out;
}

}  // namespace soda
