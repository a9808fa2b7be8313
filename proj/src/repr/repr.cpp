#include <algorithm>
#include <cmath>

#include "soda/error.hpp"
#include "soda/kernels.hpp"
#include "soda/parallel.hpp"
#include "soda/repr.hpp"

namespace soda {
namespace {

// Column-centered copy stored column-major, so feature columns are
// contiguous for the dot kernel.
std::vector<double> centered_columns(const HiddenStateMatrix& m) {
  std::vector<double> out(m.rows * m.cols);
  const double inv_n = 1.0 / static_cast<double>(m.rows);
  for (std::size_t c = 0; c < m.cols; ++c) {
    double* col = &out[c * m.rows];
    for (std::size_t r = 0; r < m.rows; ++r) col[r] = m.at(r, c);
    const double mean = kernels::sum({col, m.rows}) * inv_n;
    for (std::size_t r = 0; r < m.rows; ++r) col[r] -= mean;
  }
  return out;
}

// ||A^T B||_F^2 for column-major A (n x p) and B (n x q).
double cross_frobenius_sq(const std::vector<double>& a, std::size_t p,
                          const std::vector<double>& b, std::size_t q, std::size_t n) {
  double total = 0.0;
  for (std::size_t i = 0; i < p; ++i) {
    const std::span<const double> ai{a.data() + i * n, n};
    for (std::size_t j = 0; j < q; ++j) {
      const double v = kernels::dot(ai, {b.data() + j * n, n});
      total += v * v;
    }
  }
  return total;
}

void check_values(std::span<const double> values, std::size_t min_count, const char* what) {
  if (values.size() < min_count) {
    fail(ErrorCode::InvalidInput, std::string(what) + " needs at least " +
                                      std::to_string(min_count) + " values");
  }
  for (double v : values) {
    if (!std::isfinite(v)) fail(ErrorCode::NumericalError, std::string(what) + ": non-finite value");
  }
}

}  // namespace

double linear_cka(const HiddenStateMatrix& x, const HiddenStateMatrix& y) {
  if (x.rows != y.rows) fail(ErrorCode::InvalidInput, "CKA inputs must have equal row counts");
  if (x.rows < 2) fail(ErrorCode::InvalidInput, "CKA needs at least 2 rows");
  const std::size_t n = x.rows;
  const std::vector<double> xc = centered_columns(x);
  const std::vector<double> yc = centered_columns(y);
  if (kernels::sum_squares(xc) == 0.0 || kernels::sum_squares(yc) == 0.0) {
    fail(ErrorCode::DegenerateInput, "CKA input has zero norm after centering");
  }
  const double xy = cross_frobenius_sq(xc, x.cols, yc, y.cols, n);
  const double xx = std::sqrt(cross_frobenius_sq(xc, x.cols, xc, x.cols, n));
  const double yy = std::sqrt(cross_frobenius_sq(yc, y.cols, yc, y.cols, n));
  return xy / (xx * yy);
}

double activation_entropy(std::span<const double> values, int n_bins) {
  if (n_bins < 2) fail(ErrorCode::InvalidConfig, "n_bins must be >= 2");
  check_values(values, 2, "activation_entropy");
  const auto [lo_it, hi_it] = std::minmax_element(values.begin(), values.end());
  const double lo = *lo_it;
  const double hi = *hi_it;
  if (!(hi > lo)) fail(ErrorCode::DegenerateInput, "all activation values are identical");
  const double width = (hi - lo) / n_bins;
  std::vector<std::size_t> counts(static_cast<std::size_t>(n_bins), 0);
  for (double v : values) {
    auto bin = static_cast<long>(std::floor((v - lo) / width));
    bin = std::clamp(bin, 0L, static_cast<long>(n_bins - 1));
    ++counts[static_cast<std::size_t>(bin)];
  }
  const double n = static_cast<double>(values.size());
  double h = 0.0;
  for (std::size_t c : counts) {
    if (c == 0) continue;
    const double p = static_cast<double>(c) / n;
    h -= p * std::log(p);
  }
  return h;
}

double activation_kurtosis(std::span<const double> values) {
  check_values(values, 4, "activation_kurtosis");
  const double n = static_cast<double>(values.size());
  const double mean = kernels::sum(values) / n;
  const kernels::CentralMoments m = kernels::central_moments(values, mean);
  const double m2 = m.sum_sq / n;
  const double m4 = m.sum_quad / n;
  if (!(m2 > 0.0)) fail(ErrorCode::DegenerateInput, "activation values have zero variance");
  return m4 / (m2 * m2);
}

double pearson_correlation(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size() || a.size() < 2) {
    fail(ErrorCode::InvalidInput, "correlation needs two aligned series of length >= 2");
  }
  const double n = static_cast<double>(a.size());
  const double ma = kernels::sum(a) / n;
  const double mb = kernels::sum(b) / n;
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  if (saa == 0.0 || sbb == 0.0) fail(ErrorCode::DegenerateInput, "constant series");
  return sab / std::sqrt(saa * sbb);
}

std::vector<ReprReport> repr_report(const ModelParams& base,
                                    const std::vector<ModelParams>& candidates,
                                    const std::vector<std::string>& candidate_ids,
                                    const std::vector<Tokens>& prompts, int n_bins) {
  if (base.architecture() != Architecture::TinyTransformer) {
    fail(ErrorCode::UnsupportedArchitecture, "representation analysis needs transformer models");
  }
  if (candidate_ids.size() != candidates.size()) {
    fail(ErrorCode::InvalidInput, "one id per candidate required");
  }
  if (prompts.size() < 2) fail(ErrorCode::InvalidInput, "representation analysis needs >= 2 prompts");
  for (const ModelParams& c : candidates) {
    if (c.architecture() != base.architecture() || c.vocab_size() != base.vocab_size() ||
        !(c.dims() == base.dims())) {
      fail(ErrorCode::UnsupportedArchitecture, "candidate architecture differs from base");
    }
  }
  const int layers = hidden_layer_count(base);
  std::vector<HiddenStateMatrix> base_states;
  for (int l = 0; l < layers; ++l) base_states.push_back(extract_hidden_states(base, prompts, l));

  std::vector<ReprReport> out(candidates.size());
  parallel_for(candidates.size(), [&](std::size_t i) {
    ReprReport& r = out[i];
    r.candidate_id = candidate_ids[i];
    for (int l = 0; l < layers; ++l) {
      const HiddenStateMatrix states = extract_hidden_states(candidates[i], prompts, l);
      r.cka_to_base.push_back(linear_cka(base_states[static_cast<std::size_t>(l)], states));
      if (l == layers - 1) {
        r.last_layer_entropy = activation_entropy(states.values, n_bins);
        r.last_layer_kurtosis = activation_kurtosis(states.values);
      }
    }
  });
  return out;
}

}  // namespace soda
