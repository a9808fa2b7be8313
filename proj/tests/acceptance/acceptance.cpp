// One PASS/FAIL line per acceptance criterion. Exit status is nonzero if
// any criterion fails.

#include <sys/wait.h>
#include <unistd.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <numbers>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "oracles.hpp"
#include "soda/eval.hpp"
#include "soda/io.hpp"
#include "soda/objectives.hpp"
#include "soda/pipeline.hpp"
#include "soda/repr.hpp"
#include "soda/rng.hpp"

using namespace soda;
namespace fs = std::filesystem;

namespace {

int failures = 0;

void report(int n, bool ok, const std::string& what, const std::string& detail) {
  std::printf("[%s] criterion %d: %s (%s)\n", ok ? "PASS" : "FAIL", n, what.c_str(), detail.c_str());
  std::fflush(stdout);
  if (!ok) ++failures;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(double v, int precision = 4) {
  std::ostringstream s;
  s.precision(precision);
  s << v;
  return s.str();
}

double median(const std::vector<double>& v) { return quantile(v, 0.5); }

std::string join(const std::vector<double>& v) {
  std::string out = "[";
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? " " : "") + fmt(v[i]);
  return out + "]";
}

Tokens random_response(Rng& rng, int vocab, int max_len) {
  Tokens r;
  while (static_cast<int>(r.size()) < max_len) {
    const Token t = static_cast<Token>(rng.below(static_cast<std::uint64_t>(vocab)));
    r.push_back(t);
    if (t == vocab - 1) break;
  }
  return r;
}

Tokens random_prompt(Rng& rng, int vocab) {
  Tokens p(1 + rng.below(3));
  for (auto& t : p) t = static_cast<Token>(rng.below(static_cast<std::uint64_t>(vocab - 1)));
  return p;
}

// ---------------------------------------------------------------------------

void criterion_1() {
  const auto t0 = std::chrono::steady_clock::now();
  double worst_sft = 0, worst_dpo = 0, worst_bt = 0;
  Rng rng(101);
  for (int cfg = 0; cfg < 20; ++cfg) {
    const int vocab = 2 + static_cast<int>(rng.below(5));  // 2..6
    const ModelParams m = ModelParams::random_tabular(vocab, 0.5 + rng.uniform(), rng.engine()());
    const ModelParams ref = ModelParams::random_tabular(vocab, 0.5 + rng.uniform(), rng.engine()());
    std::vector<SequenceExample> batch, other;
    std::vector<PreferencePair> pairs;
    for (int i = 0; i < 6; ++i) {
      const Tokens p = random_prompt(rng, vocab);
      batch.push_back(SequenceExample::make(p, random_response(rng, vocab, 3)));
      other.push_back(SequenceExample::make(p, random_response(rng, vocab, 3)));
      pairs.push_back({p, batch.back().response, other.back().response});
    }
    const double beta = 0.05 + rng.uniform();
    worst_sft = std::max(worst_sft, finite_difference_check(
        [&](const ModelParams& q) { return sft_loss_and_grad(q, batch); }, m, 1e-5, 1e-4).max_rel_error);
    worst_dpo = std::max(worst_dpo, finite_difference_check(
        [&](const ModelParams& q) {
          DpoBatchResult b = dpo_loss_and_grad(q, ref, pairs, beta);
          return LossAndGrad{b.loss, std::move(b.grad)};
        },
        m, 1e-5, 1e-4).max_rel_error);
    worst_bt = std::max(worst_bt, finite_difference_check(
        [&](const ModelParams& q) { return bt_discriminator_batch(q, batch, other); }, m, 1e-5, 1e-4).max_rel_error);
  }
  const double secs = seconds_since(t0);
  const bool ok = worst_sft < 1e-4 && worst_dpo < 1e-4 && worst_bt < 1e-4 && secs < 30.0;
  report(1, ok, "analytic gradients match central differences on 20 tabular configs",
         "max rel err sft=" + fmt(worst_sft, 3) + " dpo=" + fmt(worst_dpo, 3) + " bt=" + fmt(worst_bt, 3) +
             ", " + fmt(secs, 3) + " s");
}

void criterion_2() {
  Rng rng(202);
  double worst_loss = 0, worst_weight = 0, worst_double = 0;
  for (int i = 0; i < 100; ++i) {
    const int vocab = 3 + static_cast<int>(rng.below(4));
    const ModelParams m = ModelParams::random_tabular(vocab, 1.0, rng.engine()());
    const ModelParams other = ModelParams::random_tabular(vocab, 1.0, rng.engine()());
    const PreferencePair p{random_prompt(rng, vocab), random_response(rng, vocab, 3),
                           random_response(rng, vocab, 3)};
    const double beta = 0.01 + rng.uniform();
    const DpoDiagnostics d = dpo_loss(m, m, p, beta);
    worst_loss = std::max(worst_loss, std::abs(d.loss - std::numbers::ln2));
    worst_weight = std::max(worst_weight, std::abs(d.adaptive_weight - 0.5));
    const double m1 = dpo_loss(m, other, p, beta).margin;
    const double m2 = dpo_loss(m, other, p, 2 * beta).margin;
    worst_double = std::max(worst_double, std::abs(m2 - 2 * m1));
  }
  const bool ok = worst_loss <= 1e-9 && worst_weight <= 1e-12 && worst_double <= 1e-9;
  report(2, ok, "DPO identities at params = ref and under beta doubling",
         "max |loss-ln2|=" + fmt(worst_loss, 3) + " max |w-0.5|=" + fmt(worst_weight, 3) +
             " max |m(2b)-2m(b)|=" + fmt(worst_double, 3));
}

void criterion_3() {
  const auto t0 = std::chrono::steady_clock::now();
  const int vocab = 4;
  const double beta = 0.1;
  const Tokens prompt{0};
  const ModelParams ref = ModelParams::random_tabular(vocab, 1.0, 303);
  Rng rng(304);
  std::vector<double> r(vocab);
  for (double& v : r) v = 0.2 * rng.normal();

  // Closed form q* ∝ q_ref exp(r / beta) over the four length-1 responses.
  const auto ref_lp = next_token_log_probs(ref, prompt);
  std::vector<double> star_logits(vocab);
  for (int y = 0; y < vocab; ++y) star_logits[static_cast<std::size_t>(y)] = ref_lp[static_cast<std::size_t>(y)] + r[static_cast<std::size_t>(y)] / beta;
  const auto q_star = oracle::softmax(star_logits);

  // Every ordered pair, weighted by its Bradley-Terry preference probability.
  std::vector<PreferencePair> pairs;
  std::vector<double> weights;
  for (Token i = 0; i < vocab; ++i) {
    for (Token j = 0; j < vocab; ++j) {
      if (i == j) continue;
      pairs.push_back({prompt, {i}, {j}});
      weights.push_back(sigmoid(r[static_cast<std::size_t>(i)] - r[static_cast<std::size_t>(j)]));
    }
  }

  ModelParams q = ref;
  GradientDescent opt(0.9);
  double kl = 1e300;
  int steps = 0;
  for (; steps < 200000 && seconds_since(t0) < 55.0; ++steps) {
    const DpoBatchResult b = dpo_loss_and_grad(q, ref, pairs, beta, weights);
    opt.step(q, b.grad, 1.0 / beta);
    if (steps % 100 == 0) {
      const auto lq = next_token_log_probs(q, prompt);
      long double s = 0;
      for (int y = 0; y < vocab; ++y) s += std::exp(static_cast<long double>(lq[static_cast<std::size_t>(y)])) *
                                           (lq[static_cast<std::size_t>(y)] - std::log(q_star[static_cast<std::size_t>(y)]));
      kl = static_cast<double>(s);
      if (kl < 1e-6) break;
    }
  }
  const double secs = seconds_since(t0);
  report(3, kl < 1e-3 && secs < 60.0, "DPO on exhaustive pairs recovers q* ∝ q_ref exp(r/beta)",
         "KL(q||q*)=" + fmt(kl, 3) + " after " + std::to_string(steps) + " steps, " + fmt(secs, 3) + " s");
}

// ---------------------------------------------------------------------------

struct SeedResult {
  double kl_base = 0, kl_seqkd = 0, kl_soda = 0, kl_corrupted = 0, kl_gad = 0;
  double judge_soda_vs_seqkd = 0;
  std::uint64_t gen_soda = 0, gen_seqkd = 0, gen_gad = 0;
  double wall_soda = 0, wall_gad = 0;
  std::size_t gad_instability = 0;
};

void benchmark_criteria() {
  const SetupConfig sc;  // V=6, N=2000, 200 held-out prompts
  std::vector<SeedResult> results;
  double ordering_secs = 0;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    TrainConfig cfg;
    cfg.seed = seed;
    const BenchmarkSetup setup = make_setup(sc, seed);
    const BlackBoxTeacher teacher(setup.teacher);
    const auto& train = setup.prompts.train;
    const auto& heldout = setup.prompts.heldout;
    auto kl = [&](const ModelParams& m) {
      return kl_to_teacher(m, setup.teacher, heldout, KlMode::Exact, KlOptions{cfg.max_len, 1, 0}).value;
    };
    SeedResult r;
    const auto t0 = std::chrono::steady_clock::now();
    const MethodRun soda = distill_soda(cfg, train, teacher, setup.base, &setup.cross);
    const MethodRun seqkd = run_seqkd(cfg, train, teacher, setup.base);
    r.kl_base = kl(setup.base);
    r.kl_soda = kl(soda.model);
    r.kl_seqkd = kl(seqkd.model);
    r.judge_soda_vs_seqkd = judge_win_rate(soda.model, seqkd.model, setup.teacher, heldout,
                                           JudgeOptions{cfg.max_len, 1.0, derive_seed(seed, "acceptance_judge")});
    ordering_secs += seconds_since(t0);

    TrainConfig corrupted = cfg;
    corrupted.rejection_source = ResponseSource::Corrupted;
    r.kl_corrupted = kl(distill_soda(corrupted, train, teacher, setup.base, &setup.cross).model);

    const MethodRun gad = run_gad(cfg, train, teacher, setup.base);
    r.kl_gad = kl(gad.model);
    r.gen_soda = soda.report.costs.student_generations;
    r.gen_seqkd = seqkd.report.costs.student_generations;
    r.gen_gad = gad.report.costs.student_generations;
    r.wall_soda = soda.report.costs.wall_clock_seconds;
    r.wall_gad = gad.report.costs.wall_clock_seconds;
    r.gad_instability = gad.report.instability_events;
    results.push_back(r);
  }

  std::vector<double> base, seqkd, soda, corrupted, gad, judge;
  bool costs_ok = true;
  double wall_soda = 0, wall_gad = 0;
  std::size_t events = 0;
  TrainConfig defaults;
  const std::uint64_t n = sc.n_prompts;
  const std::uint64_t nek = n * static_cast<std::uint64_t>(defaults.gad_epochs) *
                            static_cast<std::uint64_t>(defaults.rollouts);
  for (const SeedResult& r : results) {
    base.push_back(r.kl_base);
    seqkd.push_back(r.kl_seqkd);
    soda.push_back(r.kl_soda);
    corrupted.push_back(r.kl_corrupted);
    gad.push_back(r.kl_gad);
    judge.push_back(r.judge_soda_vs_seqkd);
    costs_ok = costs_ok && r.gen_soda == n && r.gen_seqkd == 0 && r.gen_gad == nek;
    wall_soda += r.wall_soda;
    wall_gad += r.wall_gad;
    events += r.gad_instability;
  }

  const bool order = median(soda) < median(seqkd) && median(seqkd) < median(base);
  const bool judge_ok = median(judge) > 50.0;
  report(4, order && judge_ok && ordering_secs < 300.0,
         "held-out KL SODA < SeqKD < Base (median of 5 seeds) and SODA beats SeqKD on the judge",
         "median KL soda=" + fmt(median(soda)) + " seqkd=" + fmt(median(seqkd)) + " base=" +
             fmt(median(base)) + "; judge soda-vs-seqkd median=" + fmt(median(judge)) + " " +
             join(judge) + "; " + fmt(ordering_secs, 3) + " s");

  report(5, median(soda) <= median(corrupted),
         "SODA with q0 negatives is no worse than corrupted negatives (median held-out KL)",
         "q0=" + fmt(median(soda)) + " " + join(soda) + " corrupted=" + fmt(median(corrupted)) + " " +
             join(corrupted));

  report(6, costs_ok && wall_soda < wall_gad,
         "student generations SODA=N, SeqKD=0, GAD=N*E*K; SODA faster than GAD",
         "N=" + std::to_string(n) + " N*E*K=" + std::to_string(nek) + " soda=" +
             std::to_string(results[0].gen_soda) + " seqkd=" + std::to_string(results[0].gen_seqkd) +
             " gad=" + std::to_string(results[0].gen_gad) + "; wall soda=" + fmt(wall_soda, 3) +
             " s gad=" + fmt(wall_gad, 3) + " s, gad/soda=" + fmt(wall_gad / wall_soda, 3) + "x");

  // Frozen discriminator with zero scores: the generator must not move.
  const BenchmarkSetup setup = make_setup(sc, 1);
  const BlackBoxTeacher teacher(setup.teacher);
  TrainConfig cfg;
  cfg.seed = 1;
  CostCounters costs;
  const Dataset data = generate_teacher_data(teacher, setup.prompts.train, cfg, costs);
  ModelParams gen = setup.base;
  ModelParams disc = setup.base.with_values(std::vector<double>(setup.base.size(), 0.0));
  gad_adversarial_phase(gen, disc, data, cfg, costs, nullptr, GadOptions{true});
  double moved = 0;
  for (std::size_t i = 0; i < gen.size(); ++i) moved = std::max(moved, std::abs(gen.values()[i] - setup.base.values()[i]));
  report(7, median(gad) < median(base) && moved == 0.0,
         "GAD improves KL over base (median of 5 seeds); frozen discriminator leaves the generator unchanged",
         "median KL gad=" + fmt(median(gad)) + " base=" + fmt(median(base)) + "; instability events=" +
             std::to_string(events) + "; max generator change with frozen disc=" + fmt(moved));
}

// ---------------------------------------------------------------------------

HiddenStateMatrix gaussian(std::size_t n, std::size_t d, Rng& rng) {
  HiddenStateMatrix m{n, d, std::vector<double>(n * d)};
  for (auto& v : m.values) v = rng.normal();
  return m;
}

std::vector<double> random_orthogonal(std::size_t d, Rng& rng) {
  std::vector<double> q(d * d);
  for (auto& v : q) v = rng.normal();
  for (std::size_t c = 0; c < d; ++c) {
    for (int pass = 0; pass < 2; ++pass) {
      for (std::size_t p = 0; p < c; ++p) {
        double dot = 0;
        for (std::size_t r = 0; r < d; ++r) dot += q[r * d + c] * q[r * d + p];
        for (std::size_t r = 0; r < d; ++r) q[r * d + c] -= dot * q[r * d + p];
      }
    }
    double norm = 0;
    for (std::size_t r = 0; r < d; ++r) norm += q[r * d + c] * q[r * d + c];
    norm = std::sqrt(norm);
    for (std::size_t r = 0; r < d; ++r) q[r * d + c] /= norm;
  }
  return q;
}

void criterion_8() {
  Rng rng(808);
  double worst_self = 0, worst_orth = 0, worst_scale = 0;
  for (int i = 0; i < 100; ++i) {
    const std::size_t n = 10 + rng.below(40), dx = 2 + rng.below(10), dy = 2 + rng.below(10);
    const HiddenStateMatrix x = gaussian(n, dx, rng);
    const HiddenStateMatrix y = gaussian(n, dy, rng);
    const double base = linear_cka(x, y);
    worst_self = std::max(worst_self, std::abs(linear_cka(x, x) - 1.0));
    const auto q = random_orthogonal(dx, rng);
    HiddenStateMatrix xq{n, dx, std::vector<double>(n * dx, 0.0)};
    for (std::size_t r = 0; r < n; ++r)
      for (std::size_t c = 0; c < dx; ++c)
        for (std::size_t k = 0; k < dx; ++k) xq.values[r * dx + c] += x.at(r, k) * q[k * dx + c];
    worst_orth = std::max(worst_orth, std::abs(linear_cka(xq, y) - base));
    HiddenStateMatrix ys = y;
    const double c = (rng.uniform() + 0.1) * (rng.below(2) ? 1 : -1) * 10;
    for (auto& v : ys.values) v *= c;
    worst_scale = std::max(worst_scale, std::abs(linear_cka(x, ys) - base));
  }
  const double hand = linear_cka(HiddenStateMatrix{2, 2, {1, 0, -1, 0}}, HiddenStateMatrix{2, 2, {0, 2, 0, -2}});
  const bool ok = worst_self <= 1e-9 && worst_orth <= 1e-7 && worst_scale <= 1e-7 && hand == 1.0;
  report(8, ok, "CKA self-similarity, orthogonal and scale invariance, 2x2 hand case",
         "max |self-1|=" + fmt(worst_self, 3) + " orth=" + fmt(worst_orth, 3) + " scale=" +
             fmt(worst_scale, 3) + " hand=" + fmt(hand, 17));
}

void criterion_9() {
  std::vector<double> pm(1000);
  for (std::size_t i = 0; i < pm.size(); ++i) pm[i] = i % 2 ? 1.0 : -1.0;
  const double k_pm = activation_kurtosis(pm);
  Rng rng(909);
  std::vector<double> normal(1000000);
  for (auto& v : normal) v = rng.normal();
  const double k_norm = activation_kurtosis(normal);
  const double h = activation_entropy(normal, 100);
  const double h_oracle = oracle::histogram_entropy(normal, 100);
  const double rel = std::abs(h - h_oracle) / h_oracle;
  const bool ok = k_pm == 1.0 && std::abs(k_norm - 3.0) <= 0.05 && rel < 0.01;
  report(9, ok, "kurtosis and histogram entropy statistics",
         "kurtosis(+-1)=" + fmt(k_pm, 17) + " kurtosis(normal 1e6)=" + fmt(k_norm, 6) + " entropy=" +
             fmt(h, 8) + " oracle=" + fmt(h_oracle, 8) + " rel diff=" + fmt(rel, 3));
}

void criterion_10() {
  const fs::path root = fs::temp_directory_path() / ("soda_accept_" + std::to_string(::getpid()));
  fs::remove_all(root);
  const nlohmann::json cfg = {{"method", "soda"}, {"vocab_size", 6}, {"architecture", "tabular"},
                              {"n_prompts", 2000}, {"seeds", {7}}};
  atomic_write(root / "config.json", cfg.dump(2));
  auto run = [&](const std::string& out) {
    const std::string cmd = std::string(SODA_BIN) + " distill --config " + (root / "config.json").string() +
                            " --out " + (root / out).string() + " > /dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) && WEXITSTATUS(status) == 0;
  };
  const bool ran = run("a") && run("b");
  bool same = false;
  std::string detail = "distill did not complete";
  if (ran) {
    const fs::path rel = fs::path("soda") / "seed_7" / "metrics.jsonl";
    const std::string a = read_file(root / "a" / rel);
    const std::string b = read_file(root / "b" / rel);
    same = !a.empty() && a == b;
    detail = "metrics.jsonl sha256 " + sha256_hex(a).substr(0, 16) + " vs " + sha256_hex(b).substr(0, 16) +
             ", " + std::to_string(std::count(a.begin(), a.end(), '\n')) + " rows";
  }
  fs::remove_all(root);
  report(10, ran && same, "two identical distill runs give byte-identical metric streams", detail);
}

}  // namespace

int main() {
  criterion_1();
  criterion_2();
  criterion_3();
  benchmark_criteria();
  criterion_8();
  criterion_9();
  criterion_10();
  std::printf("%d criteria failed\n", failures);
  return failures == 0 ? 0 : 1;
}
