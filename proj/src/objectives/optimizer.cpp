#include <atomic>
#include <cmath>
#include <numbers>

#include "soda/error.hpp"
#include "soda/kernels.hpp"
#include "soda/objectives.hpp"
#include "soda/parallel.hpp"

namespace soda {

namespace {
std::atomic<int> g_worker_threads{1};
}

void set_worker_threads(int n) { g_worker_threads.store(n < 1 ? 1 : n); }
int worker_threads() { return g_worker_threads.load(); }

void CompensatedSum::add(std::span<const double> x, double scale) {
  for (std::size_t i = 0; i < sum_.size(); ++i) {
    const double v = x[i] * scale;
    const double t = sum_[i] + v;
    if (std::abs(sum_[i]) >= std::abs(v)) {
      comp_[i] += (sum_[i] - t) + v;
    } else {
      comp_[i] += (v - t) + sum_[i];
    }
    sum_[i] = t;
  }
}

GradientVector CompensatedSum::result() const {
  GradientVector out(sum_.size());
  for (std::size_t i = 0; i < sum_.size(); ++i) out[i] = sum_[i] + comp_[i];
  return out;
}

double CosineSchedule::at(std::size_t step) const {
  const double progress =
      static_cast<double>(step) / static_cast<double>(total_steps == 0 ? 1 : total_steps);
  return base_rate * 0.5 * (1.0 + std::cos(std::numbers::pi * std::min(progress, 1.0)));
}

double l2_norm(std::span<const double> v) { return std::sqrt(kernels::sum_squares(v)); }

void GradientDescent::step(ModelParams& params, std::span<const double> grad, double rate) {
  if (grad.size() != params.size()) {
    fail(ErrorCode::InvalidInput, "gradient length does not match parameters");
  }
  for (double g : grad) {
    if (!std::isfinite(g)) fail(ErrorCode::NumericalError, "gradient is not finite");
  }
  if (momentum_ > 0.0) {
    if (velocity_.size() != grad.size()) velocity_.assign(grad.size(), 0.0);
    kernels::scale(momentum_, velocity_);
    kernels::axpy(1.0, grad, velocity_);
    kernels::axpy(-rate, velocity_, params.values_);
  } else {
    kernels::axpy(-rate, grad, params.values_);
  }
  params.refresh_finite();
  ++params.version_;
  if (!params.finite()) fail(ErrorCode::NumericalError, "parameters diverged to non-finite values");
}

}  // namespace soda
