#pragma once

#include <atomic>
#include <cstdlib>
#include <functional>
#include <thread>
#include <vector>

namespace heatmapbcc {

/// Thread cap: HEATMAPBCC_THREADS if set, otherwise hardware concurrency.
inline int max_threads() {
  static const int cached = [] {
    if (const char* env = std::getenv("HEATMAPBCC_THREADS")) {
      const int v = std::atoi(env);
      if (v >= 1) return v;
    }
    const unsigned hw = std::thread::hardware_concurrency();
    return hw == 0 ? 1 : static_cast<int>(hw);
  }();
  return cached;
}

/// Runs fn(i) for i in [0, n). Tasks must be independent and write disjoint
/// outputs; results are then identical for any thread count.
inline void parallel_for(int n, const std::function<void(int)>& fn) {
  const int threads = std::min(max_threads(), n);
  if (threads <= 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<int> next{0};
  std::vector<std::thread> pool;
  pool.reserve(threads);
  for (int t = 0; t < threads; ++t) {
    pool.emplace_back([&] {
      for (int i = next.fetch_add(1); i < n; i = next.fetch_add(1)) fn(i);
    });
  }
  for (auto& th : pool) th.join();
}

}  // namespace heatmapbcc
