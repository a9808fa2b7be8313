#pragma once

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <span>
#include <vector>

#include "soda/rng.hpp"

namespace soda::detail {

inline std::size_t batches_per_epoch(std::size_t n, int batch_size) {
  const auto b = static_cast<std::size_t>(batch_size);
  return (n + b - 1) / b;
}

// Calls step(epoch, global_step, indices) for every mini-batch, with a fresh
// seeded shuffle per epoch.
template <typename Step>
void for_each_batch(std::size_t n, int epochs, int batch_size, std::uint64_t order_seed,
                    Step&& step) {
  std::vector<std::size_t> order(n);
  std::size_t global = 0;
  const auto b = static_cast<std::size_t>(batch_size);
  for (int e = 0; e < epochs; ++e) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng(derive_seed(order_seed, "epoch", static_cast<std::uint64_t>(e)));
    std::shuffle(order.begin(), order.end(), rng.engine());
    for (std::size_t start = 0; start < n; start += b) {
      step(e, global++, std::span<const std::size_t>(order.data() + start, std::min(b, n - start)));
    }
  }
}

}  // namespace soda::detail
