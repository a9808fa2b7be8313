#pragma once

// Data-parallel inner loops shared by the models, objectives and analysis
// code. Each kernel has a scalar reference and vectorized variants; the
// active variant is picked once at startup from CPUID (overridable through
// SODA_SIMD=scalar|avx2|neon or set_isa()).
//
// Elementwise kernels (axpy, scale) are bit-identical across variants.
// Reductions differ only in summation order.

#include <cstddef>
#include <span>
#include <string_view>

namespace soda::kernels {

enum class Isa { Scalar, Avx2, Neon };

struct CentralMoments {
  double sum_sq;    // sum (x - mean)^2
  double sum_quad;  // sum (x - mean)^4
};

struct KernelTable {
  double (*dot)(const double* a, const double* b, std::size_t n);
  void (*axpy)(double alpha, const double* x, double* y, std::size_t n);
  void (*scale)(double alpha, double* x, std::size_t n);
  double (*sum)(const double* x, std::size_t n);
  double (*sum_squares)(const double* x, std::size_t n);
  double (*max_value)(const double* x, std::size_t n);
  CentralMoments (*central_moments)(const double* x, std::size_t n, double mean);
};

namespace scalar {
const KernelTable& table();
}
namespace avx2 {
const KernelTable& table();
}
namespace neon {
const KernelTable& table();
}

bool isa_supported(Isa isa);
std::string_view isa_name(Isa isa);
Isa active_isa();

/// Switches the process-wide variant. Throws InvalidConfig if unsupported.
void set_isa(Isa isa);

const KernelTable& table_for(Isa isa);
const KernelTable& active();

inline double dot(std::span<const double> a, std::span<const double> b) {
  return active().dot(a.data(), b.data(), a.size());
}

/// y += alpha * x
inline void axpy(double alpha, std::span<const double> x, std::span<double> y) {
  active().axpy(alpha, x.data(), y.data(), x.size());
}

inline void scale(double alpha, std::span<double> x) {
  active().scale(alpha, x.data(), x.size());
}

inline double sum(std::span<const double> x) {
  return active().sum(x.data(), x.size());
}

inline double sum_squares(std::span<const double> x) {
  return active().sum_squares(x.data(), x.size());
}

/// Largest element; -inf for an empty span.
inline double max_value(std::span<const double> x) {
  return active().max_value(x.data(), x.size());
}

inline CentralMoments central_moments(std::span<const double> x, double mean) {
  return active().central_moments(x.data(), x.size(), mean);
}

}  // namespace soda::kernels
