#include <cmath>
#include <limits>
#include <vector>

#include "doctest.h"
#include "soda/error.hpp"
#include "soda/kernels.hpp"
#include "soda/rng.hpp"

using namespace soda;
using namespace soda::kernels;

namespace {

std::vector<double> noise(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<double> v(n);
  for (auto& x : v) x = rng.normal() * 3.0;
  return v;
}

bool close(double a, double b, double tol) {
  return std::abs(a - b) <= tol * std::max(1.0, std::max(std::abs(a), std::abs(b)));
}

std::vector<Isa> vector_isas() {
  std::vector<Isa> out;
  for (Isa isa : {Isa::Avx2, Isa::Neon}) {
    if (isa_supported(isa)) out.push_back(isa);
  }
  return out;
}

}  // namespace

TEST_CASE("scalar is always available") {
  CHECK(isa_supported(Isa::Scalar));
  CHECK(isa_name(Isa::Scalar) == "scalar");
}

TEST_CASE("vector variants agree with scalar across lengths and tails") {
  const KernelTable& ref = scalar::table();
  for (Isa isa : vector_isas()) {
    const KernelTable& t = table_for(isa);
    for (std::size_t n : {0, 1, 2, 3, 4, 5, 7, 8, 9, 15, 16, 17, 31, 33, 64, 67, 1000, 4099}) {
      CAPTURE(isa_name(isa));
      CAPTURE(n);
      const auto a = noise(n, n + 1);
      const auto b = noise(n, n + 1000);

      CHECK(close(t.dot(a.data(), b.data(), n), ref.dot(a.data(), b.data(), n), 1e-12));
      CHECK(close(t.sum(a.data(), n), ref.sum(a.data(), n), 1e-12));
      CHECK(close(t.sum_squares(a.data(), n), ref.sum_squares(a.data(), n), 1e-12));
      CHECK(t.max_value(a.data(), n) == ref.max_value(a.data(), n));

      auto y1 = b, y2 = b;
      t.axpy(0.37, a.data(), y1.data(), n);
      ref.axpy(0.37, a.data(), y2.data(), n);
      CHECK(y1 == y2);

      auto s1 = a, s2 = a;
      t.scale(-1.7, s1.data(), n);
      ref.scale(-1.7, s2.data(), n);
      CHECK(s1 == s2);

      if (n > 0) {
        const CentralMoments m1 = t.central_moments(a.data(), n, 0.1);
        const CentralMoments m2 = ref.central_moments(a.data(), n, 0.1);
        CHECK(close(m1.sum_sq, m2.sum_sq, 1e-12));
        CHECK(close(m1.sum_quad, m2.sum_quad, 1e-12));
      }
    }
  }
}

TEST_CASE("max of empty span is -inf") {
  for (Isa isa : {Isa::Scalar, Isa::Avx2, Isa::Neon}) {
    if (!isa_supported(isa)) continue;
    CHECK(table_for(isa).max_value(nullptr, 0) == -std::numeric_limits<double>::infinity());
  }
}

TEST_CASE("set_isa switches the active table and rejects unsupported variants") {
  const Isa before = active_isa();
  set_isa(Isa::Scalar);
  CHECK(active_isa() == Isa::Scalar);
  CHECK(&active() == &scalar::table());
  for (Isa isa : {Isa::Avx2, Isa::Neon}) {
    if (isa_supported(isa)) {
      set_isa(isa);
      CHECK(active_isa() == isa);
    } else {
      CHECK_THROWS_AS(set_isa(isa), Error);
    }
  }
  set_isa(before);
}

TEST_CASE("span wrappers route through the active table") {
  const std::vector<double> a{1, 2, 3, 4, 5};
  const std::vector<double> b{5, 4, 3, 2, 1};
  CHECK(dot(a, b) == doctest::Approx(35.0));
  CHECK(sum(a) == doctest::Approx(15.0));
  CHECK(sum_squares(a) == doctest::Approx(55.0));
  CHECK(max_value(b) == 5.0);
  std::vector<double> y = b;
  axpy(2.0, a, y);
  CHECK(y == std::vector<double>{7, 8, 9, 10, 11});
  scale(0.5, y);
  CHECK(y == std::vector<double>{3.5, 4, 4.5, 5, 5.5});
  const CentralMoments m = central_moments(a, 3.0);
  CHECK(m.sum_sq == doctest::Approx(10.0));
  CHECK(m.sum_quad == doctest::Approx(34.0));
}
