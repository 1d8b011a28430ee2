#pragma once

#include <thread>
#include <vector>

namespace hiervid {

// Runs fn(r) for r in [0, n) split across `threads` workers. Each row writes
// disjoint output, and per-row arithmetic is unchanged by the split, so
// results are bit-identical for any thread count.
template <typename Fn>
inline void parallel_for_rows(int n, int threads, Fn&& fn) {
  if (threads <= 1 || n <= 1) {
    for (int r = 0; r < n; ++r) fn(r);
    return;
  }
  if (threads > n) threads = n;
  std::vector<std::thread> pool;
  pool.reserve(static_cast<std::size_t>(threads));
  for (int w = 0; w < threads; ++w) {
    const int lo = static_cast<int>(static_cast<long long>(n) * w / threads);
    const int hi = static_cast<int>(static_cast<long long>(n) * (w + 1) / threads);
    pool.emplace_back([lo, hi, &fn]() {
      for (int r = lo; r < hi; ++r) fn(r);
    });
  }
  for (auto& t : pool) t.join();
}

}  // namespace hiervid
