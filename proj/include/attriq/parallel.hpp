#pragma once

#include <atomic>
#include <cstddef>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace attriq {

inline std::size_t default_workers() {
  unsigned n = std::thread::hardware_concurrency();
  return n == 0 ? 1 : n;
}

// Splits [0, n) into a fixed number of contiguous shards and runs
// fn(begin, end, shard) for each. The shard layout depends only on n,
// not on the worker count, so per-shard accumulation stays reproducible
// across machines with different core counts.
template <typename Fn>
inline void parallel_shards(std::size_t n, std::size_t workers, Fn&& fn,
                            std::size_t shard_count = 16) {
  if (n == 0) return;
  std::size_t shards = std::min(n, shard_count);
  std::size_t per = (n + shards - 1) / shards;
  if (workers == 0) workers = default_workers();
  workers = std::min(workers, shards);

  if (workers <= 1) {
    for (std::size_t s = 0; s < shards; ++s) {
      std::size_t b = s * per;
      std::size_t e = std::min(n, b + per);
      if (b < e) fn(b, e, s);
    }
    return;
  }

  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mu;
  auto worker = [&]() {
    for (;;) {
      std::size_t s = next.fetch_add(1);
      if (s >= shards) return;
      std::size_t b = s * per;
      std::size_t e = std::min(n, b + per);
      if (b >= e) continue;
      try {
        fn(b, e, s);
      } catch (...) {
        std::lock_guard<std::mutex> lock(error_mu);
        if (!error) error = std::current_exception();
        return;
      }
    }
  };
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(worker);
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

// Convenience: one item at a time, any order; results must be written to
// pre-sized slots so output order does not depend on scheduling.
template <typename Fn>
inline void parallel_items(std::size_t n, std::size_t workers, Fn&& fn) {
  parallel_shards(
      n, workers,
      [&](std::size_t b, std::size_t e, std::size_t) {
        for (std::size_t i = b; i < e; ++i) fn(i);
      },
      n);
}

}  // namespace attriq
