#pragma once

#include <algorithm>
#include <cstddef>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace lsdf {

// Static block partition of [0, n) over hardware threads. Each worker owns a
// contiguous range, so callers that write only to index-owned slots need no
// synchronisation. The first exception thrown by any worker is rethrown.
template <typename Fn>
void parallel_for(std::size_t n, Fn&& fn, std::size_t min_chunk = 1) {
  if (n == 0) return;
  std::size_t workers = std::max<std::size_t>(1, std::thread::hardware_concurrency());
  workers = std::min(workers, (n + min_chunk - 1) / min_chunk);
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }

  std::exception_ptr failure;
  std::mutex failure_mutex;
  std::vector<std::thread> pool;
  pool.reserve(workers);
  const std::size_t chunk = (n + workers - 1) / workers;
  for (std::size_t w = 0; w < workers; ++w) {
    const std::size_t begin = w * chunk;
    const std::size_t end = std::min(n, begin + chunk);
    if (begin >= end) break;
    pool.emplace_back([&, begin, end] {
      try {
        for (std::size_t i = begin; i < end; ++i) fn(i);
      } catch (...) {
        std::lock_guard lock(failure_mutex);
        if (!failure) failure = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);
}

}  // namespace lsdf
