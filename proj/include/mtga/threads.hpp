#pragma once
// Worker-thread helpers. Parallelism never changes results: work items are
// independent and reductions happen on the caller thread in index order.

#include <algorithm>
#include <cstdlib>
#include <functional>
#include <thread>
#include <vector>

namespace mtga {

// MTGA_THREADS caps worker parallelism; default is the hardware concurrency
// clamped to [1, 8].
inline int worker_threads() {
  if (const char* env = std::getenv("MTGA_THREADS")) {
    const int v = std::atoi(env);
    if (v >= 1) return std::min(v, 64);
  }
  const unsigned hc = std::thread::hardware_concurrency();
  return static_cast<int>(std::clamp(hc, 1u, 8u));
}

// Runs fn(i) for i in [0, n) on up to worker_threads() threads.
inline void parallel_for_index(std::int64_t n, const std::function<void(std::int64_t)>& fn,
                               int max_threads = -1) {
  const int want = max_threads > 0 ? std::min(max_threads, worker_threads()) : worker_threads();
  const int nthreads = static_cast<int>(std::min<std::int64_t>(want, n));
  if (nthreads <= 1) {
    for (std::int64_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  pool.reserve(static_cast<std::size_t>(nthreads));
  for (int t = 0; t < nthreads; ++t)
    pool.emplace_back([&, t] {
      for (std::int64_t i = t; i < n; i += nthreads) fn(i);
    });
  for (auto& th : pool) th.join();
}

}  // namespace mtga
