#pragma once

#include <functional>
#include <thread>
#include <vector>

namespace mqt {

inline int effective_threads(int requested) {
  if (requested > 0) return requested;
  const unsigned hc = std::thread::hardware_concurrency();
  return hc ? static_cast<int>(hc) : 1;
}

// Runs fn(0..n-1) on up to `threads` workers with strided assignment.
// Callers own determinism: workers must write disjoint slots, and any
// reduction happens afterwards in index order.
inline void parallel_for(int n, int threads, const std::function<void(int)>& fn) {
  threads = std::min(effective_threads(threads), n);
  if (threads <= 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  pool.reserve(static_cast<size_t>(threads));
  for (int tid = 0; tid < threads; ++tid)
    pool.emplace_back([&, tid] {
      for (int i = tid; i < n; i += threads) fn(i);
    });
  for (std::thread& t : pool) t.join();
}

}  // namespace mqt
