#include <condition_variable>
#include <fstream>
#include <mutex>

#include <unistd.h>

#include "soda/memory.hpp"

namespace soda {

std::uint64_t current_rss_bytes() {
  std::ifstream statm("/proc/self/statm");
  std::uint64_t size = 0, resident = 0;
  if (!(statm >> size >> resident)) return 0;
  const long page = sysconf(_SC_PAGESIZE);
  return resident * static_cast<std::uint64_t>(page > 0 ? page : 4096);
}

MemorySampler::MemorySampler(std::chrono::milliseconds interval) : interval_(interval) {
  sample();
  thread_ = std::jthread([this](std::stop_token stop) {
    std::mutex m;
    std::condition_variable_any cv;
    std::unique_lock lock(m);
    while (!stop.stop_requested()) {
      // Wakes early when stop is requested.
      if (cv.wait_for(lock, stop, interval_, [] { return false; })) break;
      sample();
    }
  });
}

MemorySampler::~MemorySampler() { stop(); }

void MemorySampler::sample() {
  const std::uint64_t now = current_rss_bytes();
  std::uint64_t prev = peak_.load();
  while (now > prev && !peak_.compare_exchange_weak(prev, now)) {
  }
}

std::uint64_t MemorySampler::stop() {
  if (running_.exchange(false)) {
    thread_.request_stop();
    if (thread_.joinable()) thread_.join();
    sample();
  }
  return peak_.load();
}

}  // namespace soda
