#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace pide {

/// Worker count used when callers pass 0. Initialised from SOLVER_THREADS, else 1.
int default_threads();
void set_default_threads(int threads);

/// Fixed-size chunking of [0, n): chunk boundaries depend only on n and `chunk`, never on
/// the worker count, so per-chunk partial results can be combined in a fixed order.
struct Chunking {
  std::size_t n = 0;
  std::size_t chunk = 4096;

  std::size_t count() const { return n == 0 ? 0 : (n + chunk - 1) / chunk; }
  std::size_t begin(std::size_t c) const { return c * chunk; }
  std::size_t end(std::size_t c) const { return std::min(n, (c + 1) * chunk); }
};

/// Runs fn(c) for every chunk index c. Exceptions from workers are rethrown on the caller.
template <typename Fn>
void parallel_chunks(std::size_t chunks, Fn&& fn, int threads = 0) {
  if (threads <= 0) threads = default_threads();
  const auto workers = static_cast<std::size_t>(std::max(1, threads));
  if (workers == 1 || chunks <= 1) {
    for (std::size_t c = 0; c < chunks; ++c) fn(c);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  auto work = [&] {
    for (std::size_t c = next++; c < chunks; c = next++) {
      try {
        fn(c);
      } catch (...) {
        std::lock_guard lock(failure_mutex);
        if (!failure) failure = std::current_exception();
      }
    }
  };
  {
    std::vector<std::jthread> pool;
    for (std::size_t w = 1; w < std::min(workers, chunks); ++w) pool.emplace_back(work);
    work();
  }
  if (failure) std::rethrow_exception(failure);
}

}  // namespace pide
