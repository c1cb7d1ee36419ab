// Copyright (c) 2026 dynavol authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <atomic>
#include <functional>
#include <thread>
#include <vector>

namespace dynavol {

// Runs fn(begin, end) over [0, n) split into contiguous ranges, one per
// worker. Safe only when the ranges write disjoint outputs. With workers <= 1
// the call runs inline on the caller thread.
inline void parallel_ranges(int64_t n, int workers,
                            const std::function<void(int64_t, int64_t, int)>& fn) {
  if (n <= 0) return;
  if (workers <= 1 || n == 1) {
    fn(0, n, 0);
    return;
  }
  int w = int(std::min<int64_t>(workers, n));
  std::vector<std::thread> threads;
  threads.reserve(size_t(w));
  int64_t chunk = (n + w - 1) / w;
  for (int i = 0; i < w; i++) {
    int64_t b = i * chunk, e = std::min(n, b + chunk);
    if (b >= e) break;
    threads.emplace_back([&fn, b, e, i] { fn(b, e, i); });
  }
  for (auto& t : threads) t.join();
}

}  // namespace dynavol
