#pragma once

#include <algorithm>
#include <cstdlib>
#include <thread>
#include <vector>

namespace ebml {

// Worker cap: EBM_LENS_THREADS when set, else hardware concurrency.
inline std::size_t worker_count() {
  if (const char* env = std::getenv("EBM_LENS_THREADS")) {
    long v = std::atol(env);
    if (v >= 1) return static_cast<std::size_t>(v);
  }
  unsigned hw = std::thread::hardware_concurrency();
  return hw ? hw : 1;
}

// Runs fn(shard_index, begin, end) over [0, n) split into contiguous shards.
// Results must not depend on the shard count.
template <typename Fn>
void parallel_shards(std::size_t n, const Fn& fn) {
  std::size_t workers = std::min(worker_count(), n);
  if (workers <= 1) {
    if (n > 0) fn(std::size_t{0}, std::size_t{0}, n);
    return;
  }
  std::vector<std::thread> pool;
  std::size_t chunk = (n + workers - 1) / workers;
  for (std::size_t s = 0; s < workers; ++s) {
    std::size_t b = s * chunk, e = std::min(b + chunk, n);
    if (b >= e) break;
    pool.emplace_back([&fn, s, b, e] { fn(s, b, e); });
  }
  for (auto& t : pool) t.join();
}

}  // namespace ebml
