#pragma once

#include <atomic>
#include <chrono>
#include <cstdint>
#include <thread>

namespace soda {

/// Resident set size from /proc/self/statm; 0 where unavailable.
std::uint64_t current_rss_bytes();

/// Samples the resident set on a background thread and keeps the maximum.
/// Never touches the work being measured.
class MemorySampler {
 public:
  explicit MemorySampler(std::chrono::milliseconds interval = std::chrono::milliseconds(100));
  ~MemorySampler();
  MemorySampler(const MemorySampler&) = delete;
  MemorySampler& operator=(const MemorySampler&) = delete;

  /// Stops sampling (idempotent) and returns the peak seen.
  std::uint64_t stop();
  std::uint64_t peak() const { return peak_.load(); }

 private:
  void sample();

  std::atomic<std::uint64_t> peak_{0};
  std::atomic<bool> running_{true};
  std::chrono::milliseconds interval_;
  std::jthread thread_;
};

}  // namespace soda
