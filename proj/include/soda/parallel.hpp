#pragma once

#include <algorithm>
#include <cstddef>
#include <exception>
#include <thread>
#include <vector>

namespace soda {

/// Process-wide worker count for per-item loops (1 = run inline).
void set_worker_threads(int n);
int worker_threads();

/// Calls fn(i) for every i in [0, n). Items must write only their own
/// outputs; callers reduce afterwards in index order, so results never
/// depend on the thread count.
template <typename Fn>
void parallel_for(std::size_t n, Fn&& fn) {
  const auto threads = static_cast<std::size_t>(std::max(1, worker_threads()));
  if (threads == 1 || n < 2) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  const std::size_t used = std::min(threads, n);
  std::vector<std::exception_ptr> errors(used);
  {
    std::vector<std::jthread> pool;
    pool.reserve(used);
    for (std::size_t t = 0; t < used; ++t) {
      pool.emplace_back([&, t] {
        try {
          for (std::size_t i = t; i < n; i += used) fn(i);
        } catch (...) {
          errors[t] = std::current_exception();
        }
      });
    }
  }
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

}  // namespace soda
