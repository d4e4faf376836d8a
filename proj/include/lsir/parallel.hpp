#pragma once

#include <algorithm>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

#include "lsir/types.hpp"

namespace lsir {

// Worker count: LSIR_THREADS if set and positive, else hardware concurrency.
inline int default_thread_count() {
  if (const char* env = std::getenv("LSIR_THREADS")) {
    const int requested = std::atoi(env);
    if (requested > 0) return requested;
  }
  const unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : static_cast<int>(hw);
}

// Runs body(i) for i in [begin, end) on up to `threads` workers, blocks of
// contiguous indices per worker.  Results must be written to per-index
// slots by the caller; the first exception thrown by any worker is
// rethrown here.  With one thread the loop runs inline, so outputs never
// depend on the worker count as long as body(i) is pure in i.
template <typename Body>
void parallel_for(Index begin, Index end, int threads, Body&& body) {
  const Index count = end - begin;
  if (count <= 0) return;
  threads = std::min<Index>(std::max(threads, 1), count);
  if (threads == 1) {
    for (Index i = begin; i < end; ++i) body(i);
    return;
  }

  std::exception_ptr failure;
  std::mutex failure_mutex;
  std::vector<std::thread> pool;
  pool.reserve(static_cast<std::size_t>(threads));
  const Index chunk = (count + threads - 1) / threads;
  for (int t = 0; t < threads; ++t) {
    const Index lo = begin + chunk * t;
    const Index hi = std::min(end, lo + chunk);
    if (lo >= hi) break;
    pool.emplace_back([&, lo, hi] {
      try {
        for (Index i = lo; i < hi; ++i) body(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(failure_mutex);
        if (!failure) failure = std::current_exception();
      }
    });
  }
  for (auto& worker : pool) worker.join();
  if (failure) std::rethrow_exception(failure);
}

}  // namespace lsir
