#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

#include "soda/error.hpp"
#include "soda/eval.hpp"
#include "soda/parallel.hpp"
#include "soda/rng.hpp"

namespace soda {
namespace {

// Sum over the capped response space of q * (log q - log p), walking both
// models' next-token distributions together.
double exact_kl_from(const ModelParams& student, const ModelParams& teacher, Tokens& context,
                     int remaining, double log_q_prefix, double log_p_prefix) {
  const std::vector<double> lq = next_token_log_probs(student, context);
  const std::vector<double> lp = next_token_log_probs(teacher, context);
  const Token eos = student.eos();
  double total = 0.0;
  for (Token t = 0; t < student.vocab_size(); ++t) {
    const auto i = static_cast<std::size_t>(t);
    const double q = log_q_prefix + lq[i];
    const double p = log_p_prefix + lp[i];
    if (t == eos || remaining == 1) {
      const double mass = std::exp(q);
      if (mass > 0.0) total += mass * (q - p);
    } else {
      context.push_back(t);
      total += exact_kl_from(student, teacher, context, remaining - 1, q, p);
      context.pop_back();
    }
  }
  return total;
}

void check_exact_budget(const ModelParams& student, const ModelParams& teacher, int max_len) {
  if (student.architecture() != Architecture::Tabular ||
      teacher.architecture() != Architecture::Tabular) {
    fail(ErrorCode::Budget, "exact KL enumeration requires tabular models");
  }
  if (max_len > 3 || student.vocab_size() > 8) {
    fail(ErrorCode::Budget, "exact KL enumeration budget exceeded (max_len <= 3, V <= 8)");
  }
}

}  // namespace

KlEstimate kl_to_teacher(const ModelParams& student, const ModelParams& teacher,
                         const std::vector<Tokens>& prompts, KlMode mode,
                         const KlOptions& options) {
  if (prompts.empty()) fail(ErrorCode::InvalidInput, "KL evaluation needs at least one prompt");
  if (student.vocab_size() != teacher.vocab_size()) {
    fail(ErrorCode::InvalidInput, "student and teacher vocabularies differ");
  }
  if (options.max_len < 1) fail(ErrorCode::InvalidConfig, "max_len must be >= 1");
  KlEstimate out;

  if (mode == KlMode::Exact) {
    check_exact_budget(student, teacher, options.max_len);
    // Bigram models only see the last prompt token.
    std::map<Token, double> by_last_token;
    double total = 0.0;
    for (const Tokens& prompt : prompts) {
      if (prompt.empty()) fail(ErrorCode::InvalidInput, "prompt must be non-empty");
      auto [it, inserted] = by_last_token.try_emplace(prompt.back(), 0.0);
      if (inserted) {
        Tokens context{prompt.back()};
        it->second = std::max(0.0, exact_kl_from(student, teacher, context,
                                                 options.max_len, 0.0, 0.0));
      }
      total += it->second;
    }
    out.value = total / static_cast<double>(prompts.size());
    out.samples = prompts.size();
    return out;
  }

  if (options.mc_samples < 1) fail(ErrorCode::InvalidConfig, "mc_samples must be >= 1");
  const auto m = static_cast<std::size_t>(options.mc_samples);
  std::vector<double> terms(prompts.size() * m);
  parallel_for(prompts.size(), [&](std::size_t i) {
    for (std::size_t j = 0; j < m; ++j) {
      const Tokens y = sample_response(student, prompts[i], 1.0, options.max_len,
                                       derive_seed(options.seed, "kl_mc", i * m + j));
      const SequenceExample ex = SequenceExample::make(prompts[i], y);
      terms[i * m + j] = logprob_sequence(student, ex) - logprob_sequence(teacher, ex);
    }
  });
  const double n = static_cast<double>(terms.size());
  const double mean = std::accumulate(terms.begin(), terms.end(), 0.0) / n;
  double ss = 0.0;
  for (double t : terms) ss += (t - mean) * (t - mean);
  out.value = mean;
  out.std_error = terms.size() > 1 ? std::sqrt(ss / (n - 1.0) / n) : 0.0;
  out.samples = terms.size();
  return out;
}

double judge_win_rate(const ModelParams& student, const ModelParams& reference,
                      const JudgeFn& judge, const std::vector<Tokens>& prompts,
                      const JudgeOptions& options) {
  if (prompts.empty()) fail(ErrorCode::InvalidInput, "judge needs at least one prompt");
  std::vector<double> wins(prompts.size());
  parallel_for(prompts.size(), [&](std::size_t i) {
    const std::uint64_t seed = derive_seed(options.seed, "judge", i);
    const Tokens ys = sample_response(student, prompts[i], options.temperature,
                                      options.max_len, seed);
    const Tokens yr = sample_response(reference, prompts[i], options.temperature,
                                      options.max_len, seed);
    const double s = judge(prompts[i], ys);
    const double r = judge(prompts[i], yr);
    wins[i] = s > r ? 1.0 : (s < r ? 0.0 : 0.5);
  });
  const double total = std::accumulate(wins.begin(), wins.end(), 0.0);
  return 100.0 * total / static_cast<double>(prompts.size());
}

double judge_win_rate(const ModelParams& student, const ModelParams& reference,
                      const ModelParams& teacher, const std::vector<Tokens>& prompts,
                      const JudgeOptions& options) {
  const JudgeFn judge = [&teacher](const Tokens& prompt, const Tokens& response) {
    return logprob_sequence(teacher, SequenceExample::make(prompt, response));
  };
  return judge_win_rate(student, reference, judge, prompts, options);
}

double quantile(std::vector<double> values, double p) {
  if (values.empty()) fail(ErrorCode::InvalidInput, "quantile of an empty set");
  std::sort(values.begin(), values.end());
  const double pos = p * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, values.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return values[lo] + frac * (values[hi] - values[lo]);
}

MetricSummary summarize(std::span<const double> values) {
  if (values.empty()) fail(ErrorCode::InvalidInput, "cannot summarize an empty set");
  const std::vector<double> v(values.begin(), values.end());
  MetricSummary s;
  s.count = v.size();
  s.mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  s.median = quantile(v, 0.5);
  s.q1 = quantile(v, 0.25);
  s.q3 = quantile(v, 0.75);
  s.iqr = s.q3 - s.q1;
  return s;
}

EvalSummary aggregate_runs(std::span<const EvalResult> results) {
  if (results.empty()) fail(ErrorCode::InvalidInput, "aggregate_runs needs at least one result");
  std::vector<double> kl, judge, n;
  EvalSummary out;
  for (const EvalResult& r : results) {
    kl.push_back(r.kl_to_teacher);
    judge.push_back(r.judge_score);
    n.push_back(static_cast<double>(r.n_prompts));
    out.seeds.insert(out.seeds.end(), r.seeds.begin(), r.seeds.end());
  }
  out.kl_to_teacher = summarize(kl);
  out.judge_score = summarize(judge);
  out.n_prompts = summarize(n);
  return out;
}

}  // namespace soda
