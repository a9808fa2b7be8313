#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace soda {

/// SplitMix64 finalizer.
std::uint64_t splitmix64(std::uint64_t x);

/// 64-bit FNV-1a over the bytes of `label`.
std::uint64_t fnv1a64(std::string_view label);

// Seed fan-out: splitmix64(splitmix64(master ^ fnv1a64(label)) + index).
// Every stage and item draws from its own stream, so stages can be rerun
// in isolation and per-item work can be scheduled in any order.
std::uint64_t derive_seed(std::uint64_t master, std::string_view label,
                          std::uint64_t index = 0);

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  /// Uniform in [0, 1) with 53 random bits.
  double uniform() {
    return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
  }

  double normal() { return normal_(engine_); }

  /// Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n) {
    return std::uniform_int_distribution<std::uint64_t>(0, n - 1)(engine_);
  }

  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_;
  std::normal_distribution<double> normal_{0.0, 1.0};
};

}  // namespace soda
