#pragma once

// Test-side reference computations. Deliberately written without the
// library's helpers: long double, naive loops, different formulations.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <vector>

namespace oracle {

using Tokens = std::vector<int>;

inline std::vector<long double> softmax(const std::vector<double>& logits) {
  long double mx = logits[0];
  for (double v : logits) mx = std::max<long double>(mx, v);
  std::vector<long double> p(logits.size());
  long double z = 0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    p[i] = std::exp(static_cast<long double>(logits[i]) - mx);
    z += p[i];
  }
  for (auto& v : p) v /= z;
  return p;
}

// Tabular bigram: table is V*V row-major, row = previous token.
struct Tabular {
  int vocab;
  std::vector<double> table;

  std::vector<long double> next(int prev) const {
    std::vector<double> row(table.begin() + prev * vocab, table.begin() + (prev + 1) * vocab);
    return softmax(row);
  }

  long double logprob(const Tokens& prompt, const Tokens& response) const {
    int prev = prompt.back();
    long double lp = 0;
    for (int t : response) {
      lp += std::log(next(prev)[static_cast<std::size_t>(t)]);
      prev = t;
    }
    return lp;
  }
};

// Every response that ends in EOS within max_len, or runs to max_len
// without one.
inline void all_responses(int vocab, int max_len, const std::function<void(const Tokens&)>& f,
                          Tokens prefix = {}) {
  for (int t = 0; t < vocab; ++t) {
    Tokens r = prefix;
    r.push_back(t);
    if (t == vocab - 1 || static_cast<int>(r.size()) == max_len) {
      f(r);
    } else {
      all_responses(vocab, max_len, f, r);
    }
  }
}

inline long double kl(const Tabular& q, const Tabular& p, const Tokens& prompt, int max_len) {
  long double total = 0;
  all_responses(q.vocab, max_len, [&](const Tokens& r) {
    const long double lq = q.logprob(prompt, r);
    const long double lp = p.logprob(prompt, r);
    total += std::exp(lq) * (lq - lp);
  });
  return total;
}

// Bin by sorting and walking bin edges.
inline double histogram_entropy(std::vector<double> values, int n_bins) {
  std::sort(values.begin(), values.end());
  const long double lo = values.front();
  const long double hi = values.back();
  const long double width = (hi - lo) / n_bins;
  std::vector<std::size_t> counts(static_cast<std::size_t>(n_bins), 0);
  std::size_t start = 0;
  for (int b = 0; b < n_bins; ++b) {
    std::size_t end = values.size();
    if (b + 1 < n_bins) {
      const double edge = static_cast<double>(lo + width * (b + 1));
      end = static_cast<std::size_t>(std::lower_bound(values.begin() + static_cast<long>(start),
                                                      values.end(), edge) -
                                     values.begin());
    }
    counts[static_cast<std::size_t>(b)] = end - start;
    start = end;
  }
  long double h = 0;
  const long double n = static_cast<long double>(values.size());
  for (std::size_t c : counts) {
    if (c == 0) continue;
    const long double p = c / n;
    h -= p * std::log(p);
  }
  return static_cast<double>(h);
}

// Linear CKA through centered Gram matrices: tr(KL) / sqrt(tr(KK) tr(LL)).
inline double gram_cka(const std::vector<double>& x, std::size_t n, std::size_t dx,
                       const std::vector<double>& y, std::size_t dy) {
  auto gram = [n](const std::vector<double>& m, std::size_t d) {
    std::vector<long double> k(n * n, 0);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j)
        for (std::size_t c = 0; c < d; ++c) k[i * n + j] += static_cast<long double>(m[i * d + c]) * m[j * d + c];
    // H K H with H = I - 11^T / n
    std::vector<long double> row(n, 0), col(n, 0);
    long double all = 0;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) {
        row[i] += k[i * n + j] / n;
        col[j] += k[i * n + j] / n;
        all += k[i * n + j] / (n * n);
      }
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) k[i * n + j] += all - row[i] - col[j];
    return k;
  };
  const auto k = gram(x, dx);
  const auto l = gram(y, dy);
  long double kl_ = 0, kk = 0, ll = 0;
  for (std::size_t i = 0; i < n * n; ++i) {
    kl_ += k[i] * l[i];
    kk += k[i] * k[i];
    ll += l[i] * l[i];
  }
  return static_cast<double>(kl_ / std::sqrt(kk * ll));
}

inline double kurtosis(const std::vector<double>& v) {
  long double mean = 0;
  for (double x : v) mean += x;
  mean /= v.size();
  long double m2 = 0, m4 = 0;
  for (double x : v) {
    const long double d = x - mean;
    m2 += d * d;
    m4 += d * d * d * d;
  }
  m2 /= v.size();
  m4 /= v.size();
  return static_cast<double>(m4 / (m2 * m2));
}

// Linear-interpolation quantile on a copy, written independently.
inline double quantile(std::vector<double> v, double p) {
  std::sort(v.begin(), v.end());
  const double h = (v.size() - 1) * p;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const auto hi = static_cast<std::size_t>(std::ceil(h));
  return v[lo] + (h - lo) * (v[hi] - v[lo]);
}

}  // namespace oracle
