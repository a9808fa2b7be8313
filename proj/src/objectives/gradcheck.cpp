#include <algorithm>
#include <cmath>

#include "soda/error.hpp"
#include "soda/objectives.hpp"

namespace soda {

FiniteDifferenceReport finite_difference_check(
    const std::function<double(std::span<const double>)>& loss,
    std::span<const double> theta, std::span<const double> analytic, double h,
    double tolerance) {
  if (!(h >= 1e-7 && h <= 1e-3)) {
    fail(ErrorCode::InvalidConfig, "finite-difference step must lie in [1e-7, 1e-3]");
  }
  if (analytic.size() != theta.size()) {
    fail(ErrorCode::InvalidInput, "analytic gradient length does not match parameters");
  }
  constexpr double kFloor = 1e-6;
  FiniteDifferenceReport report;
  std::vector<double> probe(theta.begin(), theta.end());
  for (std::size_t i = 0; i < theta.size(); ++i) {
    probe[i] = theta[i] + h;
    const double up = loss(probe);
    probe[i] = theta[i] - h;
    const double down = loss(probe);
    probe[i] = theta[i];
    if (!std::isfinite(up) || !std::isfinite(down)) {
      fail(ErrorCode::NumericalError,
           "loss is not finite under perturbation of coordinate " + std::to_string(i));
    }
    const double numeric = (up - down) / (2.0 * h);
    const double denom = std::max({std::abs(analytic[i]), std::abs(numeric), kFloor});
    const double rel = std::abs(analytic[i] - numeric) / denom;
    if (report.checked == 0 || rel > report.max_rel_error) {
      report.max_rel_error = rel;
      report.worst_index = i;
    }
    if (rel > tolerance) report.failing.push_back(i);
    ++report.checked;
  }
  report.passed = report.failing.empty();
  return report;
}

FiniteDifferenceReport finite_difference_check(
    const std::function<LossAndGrad(const ModelParams&)>& loss_fn, const ModelParams& params,
    double h, double tolerance) {
  const LossAndGrad at = loss_fn(params);
  auto scalar = [&](std::span<const double> theta) {
    return loss_fn(params.with_values(std::vector<double>(theta.begin(), theta.end()))).loss;
  };
  return finite_difference_check(scalar, params.values(), at.grad, h, tolerance);
}

}  // namespace soda
