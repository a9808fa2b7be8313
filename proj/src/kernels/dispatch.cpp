#include <atomic>
#include <cstdlib>
#include <string>

#include "soda/error.hpp"
#include "soda/kernels.hpp"

namespace soda::kernels {
namespace {

Isa detect() {
  if (const char* forced = std::getenv("SODA_SIMD")) {
    const std::string name(forced);
    if (name == "scalar") return Isa::Scalar;
    if (name == "avx2" && isa_supported(Isa::Avx2)) return Isa::Avx2;
    if (name == "neon" && isa_supported(Isa::Neon)) return Isa::Neon;
  }
  if (isa_supported(Isa::Avx2)) return Isa::Avx2;
  if (isa_supported(Isa::Neon)) return Isa::Neon;
  return Isa::Scalar;
}

std::atomic<Isa>& current() {
  static std::atomic<Isa> isa{detect()};
  return isa;
}

}  // namespace

bool isa_supported(Isa isa) {
  switch (isa) {
    case Isa::Scalar:
      return true;
    case Isa::Avx2:
#if defined(__x86_64__) || defined(_M_X64)
      return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
      return false;
#endif
    case Isa::Neon:
#if defined(__aarch64__)
      return true;
#else
      return false;
#endif
  }
  return false;
}

std::string_view isa_name(Isa isa) {
  switch (isa) {
    case Isa::Scalar: return "scalar";
    case Isa::Avx2: return "avx2";
    case Isa::Neon: return "neon";
  }
  return "unknown";
}

Isa active_isa() { return current().load(std::memory_order_relaxed); }

void set_isa(Isa isa) {
  if (!isa_supported(isa)) {
    fail(ErrorCode::InvalidConfig,
         "SIMD variant not supported on this CPU: " + std::string(isa_name(isa)));
  }
  current().store(isa, std::memory_order_relaxed);
}

const KernelTable& table_for(Isa isa) {
  switch (isa) {
    case Isa::Avx2: return avx2::table();
    case Isa::Neon: return neon::table();
    case Isa::Scalar: break;
  }
  return scalar::table();
}

const KernelTable& active() { return table_for(active_isa()); }

}  // namespace soda::kernels
