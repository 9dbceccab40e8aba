#pragma once

#include <algorithm>
#include <functional>
#include <thread>
#include <vector>

#include "mcinv/types.hpp"

namespace mcinv {

inline int resolve_threads(int requested) {
  if (requested > 0) return requested;
  const unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : static_cast<int>(hw);
}

// Runs fn(begin, end) over contiguous chunks of [0, n). Results that depend
// on chunk boundaries must be combined by the caller in chunk order so the
// outcome is independent of thread scheduling.
inline void parallel_for_chunks(Index n, int threads,
                                const std::function<void(Index, Index, int)>& fn) {
  threads = resolve_threads(threads);
  const Index chunks = std::min<Index>(n, threads);
  if (chunks <= 1) {
    if (n > 0) fn(0, n, 0);
    return;
  }
  std::vector<std::thread> pool;
  pool.reserve(static_cast<std::size_t>(chunks));
  const Index base = n / chunks;
  const Index extra = n % chunks;
  Index begin = 0;
  for (Index c = 0; c < chunks; ++c) {
    const Index len = base + (c < extra ? 1 : 0);
    const Index end = begin + len;
    pool.emplace_back([&fn, begin, end, c] { fn(begin, end, static_cast<int>(c)); });
    begin = end;
  }
  for (auto& t : pool) t.join();
}

// Per-index parallel map with results stored by index: deterministic
// regardless of scheduling.
inline void parallel_for(Index n, int threads,
                         const std::function<void(Index)>& body) {
  parallel_for_chunks(n, threads, [&body](Index begin, Index end, int) {
    for (Index i = begin; i < end; ++i) body(i);
  });
}

}  // namespace mcinv
