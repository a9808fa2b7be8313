#include "soda/kernels.hpp"

#if defined(__x86_64__) || defined(_M_X64)
#define SODA_HAVE_AVX2_KERNELS 1
#include <immintrin.h>
#else
#define SODA_HAVE_AVX2_KERNELS 0
#endif

#include <limits>

namespace soda::kernels::avx2 {

#if SODA_HAVE_AVX2_KERNELS
namespace {

#define SODA_AVX2 __attribute__((target("avx2,fma")))

constexpr std::size_t kLanes = 4;

SODA_AVX2 inline double hsum(__m256d v) {
  alignas(32) double lanes[kLanes];
  _mm256_store_pd(lanes, v);
  return (lanes[0] + lanes[1]) + (lanes[2] + lanes[3]);
}

SODA_AVX2 double dot(const double* a, const double* b, std::size_t n) {
  __m256d acc0 = _mm256_setzero_pd();
  __m256d acc1 = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 2 * kLanes <= n; i += 2 * kLanes) {
    acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i), acc0);
    acc1 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i + kLanes),
                           _mm256_loadu_pd(b + i + kLanes), acc1);
  }
  for (; i + kLanes <= n; i += kLanes) {
    acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i), acc0);
  }
  double s = hsum(_mm256_add_pd(acc0, acc1));
  for (; i < n; ++i) s += a[i] * b[i];
  return s;
}

// No FMA here: y + alpha*x must round exactly like the scalar loop.
SODA_AVX2 void axpy(double alpha, const double* x, double* y, std::size_t n) {
  const __m256d va = _mm256_set1_pd(alpha);
  std::size_t i = 0;
  for (; i + kLanes <= n; i += kLanes) {
    const __m256d prod = _mm256_mul_pd(va, _mm256_loadu_pd(x + i));
    _mm256_storeu_pd(y + i, _mm256_add_pd(_mm256_loadu_pd(y + i), prod));
  }
  for (; i < n; ++i) y[i] += alpha * x[i];
}

SODA_AVX2 void scale(double alpha, double* x, std::size_t n) {
  const __m256d va = _mm256_set1_pd(alpha);
  std::size_t i = 0;
  for (; i + kLanes <= n; i += kLanes) {
    _mm256_storeu_pd(x + i, _mm256_mul_pd(va, _mm256_loadu_pd(x + i)));
  }
  for (; i < n; ++i) x[i] *= alpha;
}

SODA_AVX2 double sum(const double* x, std::size_t n) {
  __m256d acc = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + kLanes <= n; i += kLanes) acc = _mm256_add_pd(acc, _mm256_loadu_pd(x + i));
  double s = hsum(acc);
  for (; i < n; ++i) s += x[i];
  return s;
}

SODA_AVX2 double sum_squares(const double* x, std::size_t n) {
  __m256d acc = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + kLanes <= n; i += kLanes) {
    const __m256d v = _mm256_loadu_pd(x + i);
    acc = _mm256_fmadd_pd(v, v, acc);
  }
  double s = hsum(acc);
  for (; i < n; ++i) s += x[i] * x[i];
  return s;
}

SODA_AVX2 double max_value(const double* x, std::size_t n) {
  double m = -std::numeric_limits<double>::infinity();
  std::size_t i = 0;
  if (n >= kLanes) {
    __m256d acc = _mm256_loadu_pd(x);
    for (i = kLanes; i + kLanes <= n; i += kLanes) {
      acc = _mm256_max_pd(acc, _mm256_loadu_pd(x + i));
    }
    alignas(32) double lanes[kLanes];
    _mm256_store_pd(lanes, acc);
    for (double v : lanes) m = v > m ? v : m;
  }
  for (; i < n; ++i) m = x[i] > m ? x[i] : m;
  return m;
}

SODA_AVX2 CentralMoments central_moments(const double* x, std::size_t n, double mean) {
  const __m256d vm = _mm256_set1_pd(mean);
  __m256d acc2 = _mm256_setzero_pd();
  __m256d acc4 = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + kLanes <= n; i += kLanes) {
    const __m256d d = _mm256_sub_pd(_mm256_loadu_pd(x + i), vm);
    const __m256d d2 = _mm256_mul_pd(d, d);
    acc2 = _mm256_add_pd(acc2, d2);
    acc4 = _mm256_fmadd_pd(d2, d2, acc4);
  }
  CentralMoments m{hsum(acc2), hsum(acc4)};
  for (; i < n; ++i) {
    const double d = x[i] - mean;
    const double d2 = d * d;
    m.sum_sq += d2;
    m.sum_quad += d2 * d2;
  }
  return m;
}

#undef SODA_AVX2

}  // namespace

const KernelTable& table() {
  static const KernelTable t{dot, axpy, scale, sum, sum_squares, max_value,
                             central_moments};
  return t;
}

#else

const KernelTable& table() { return scalar::table(); }

#endif

}  // namespace soda::kernels::avx2
