#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <thread>
#include <vector>

namespace sol {

namespace detail {
inline std::atomic<int>& thread_count_storage() {
  static std::atomic<int> count{1};
  return count;
}
}  // namespace detail

/// Number of worker threads used by the transform loops. Defaults to 1,
/// which is the bitwise-reproducible reference mode.
inline int thread_count() { return detail::thread_count_storage().load(); }

inline void set_thread_count(int n) {
  detail::thread_count_storage().store(std::max(1, n));
}

/// Calls fn(chunk, begin, end) on contiguous chunks of [0, n). Chunk
/// boundaries depend only on n and the thread count, so per-chunk partial
/// results can be reduced in a fixed order.
template <class Fn>
void parallel_chunks(std::size_t n, Fn&& fn) {
  const auto threads = static_cast<std::size_t>(thread_count());
  if (threads <= 1 || n < 2) {
    fn(std::size_t{0}, std::size_t{0}, n);
    return;
  }
  const std::size_t chunks = std::min(threads, n);
  std::vector<std::thread> pool;
  pool.reserve(chunks - 1);
  auto bounds = [&](std::size_t c) { return c * n / chunks; };
  for (std::size_t c = 1; c < chunks; ++c) {
    pool.emplace_back([&, c] { fn(c, bounds(c), bounds(c + 1)); });
  }
  fn(std::size_t{0}, bounds(0), bounds(1));
  for (auto& t : pool) t.join();
}

inline std::size_t chunk_count(std::size_t n) {
  const auto threads = static_cast<std::size_t>(thread_count());
  if (threads <= 1 || n < 2) return 1;
  return std::min(threads, n);
}

}  // namespace sol
