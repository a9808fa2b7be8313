#pragma once

// Oracle evaluation against the known synthetic teacher.

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "soda/lm.hpp"

namespace soda {

enum class KlMode { Exact, MonteCarlo };

struct KlOptions {
  int max_len = 3;
  int mc_samples = 64;  // per prompt, MonteCarlo only
  std::uint64_t seed = 0;
};

struct KlEstimate {
  double value = 0.0;      // nats, mean over prompts
  double std_error = 0.0;  // 0 for Exact
  std::size_t samples = 0;
};

/// Mean over prompts of KL(q_student(.|x) || p_teacher(.|x)) over the
/// length-capped response space. Exact mode enumerates every response and
/// requires tabular models with max_len <= 3 and V <= 8 (else BudgetError).
KlEstimate kl_to_teacher(const ModelParams& student, const ModelParams& teacher,
                         const std::vector<Tokens>& prompts, KlMode mode,
                         const KlOptions& options);

struct JudgeOptions {
  int max_len = 3;
  double temperature = 1.0;
  std::uint64_t seed = 0;
};

/// Scores a (prompt, response); higher is better.
using JudgeFn = std::function<double(const Tokens& prompt, const Tokens& response)>;

/// Per prompt, one response from each sampler under the same per-prompt
/// seed; a win is a strictly higher judge score, a tie counts 0.5.
/// Returns 100 * mean(win).
double judge_win_rate(const ModelParams& student, const ModelParams& reference,
                      const JudgeFn& judge, const std::vector<Tokens>& prompts,
                      const JudgeOptions& options);

/// Judge = exact teacher log-likelihood.
double judge_win_rate(const ModelParams& student, const ModelParams& reference,
                      const ModelParams& teacher, const std::vector<Tokens>& prompts,
                      const JudgeOptions& options);

struct EvalResult {
  double kl_to_teacher = 0.0;
  double judge_score = 50.0;
  std::size_t n_prompts = 0;
  std::vector<std::uint64_t> seeds;
};

struct MetricSummary {
  double median = 0.0;
  double mean = 0.0;
  double q1 = 0.0;
  double q3 = 0.0;
  double iqr = 0.0;
  std::size_t count = 0;
};

struct EvalSummary {
  MetricSummary kl_to_teacher;
  MetricSummary judge_score;
  MetricSummary n_prompts;
  std::vector<std::uint64_t> seeds;
};

/// Linear-interpolation quantile (position p * (n - 1) in sorted order).
double quantile(std::vector<double> values, double p);
MetricSummary summarize(std::span<const double> values);

/// Per-metric median / mean / IQR across runs. Throws InvalidInput if empty.
EvalSummary aggregate_runs(std::span<const EvalResult> results);

}  // namespace soda
