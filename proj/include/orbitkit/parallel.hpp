#pragma once

#include <algorithm>
#include <cstdint>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace orbitkit {

namespace detail {
inline int& thread_limit_storage() {
  static int limit = [] {
    if (const char* env = std::getenv("ORBITKIT_THREADS")) return std::max(0, std::atoi(env));
    return 0;
  }();
  return limit;
}
}  // namespace detail

/// Caps worker threads used by parallel_for; 0 means hardware concurrency.
inline void set_thread_limit(int n) { detail::thread_limit_storage() = std::max(0, n); }

inline int thread_limit() {
  const int n = detail::thread_limit_storage();
  if (n > 0) return n;
  return std::max(1u, std::thread::hardware_concurrency());
}

/// Runs fn(i) for i in [0, n) over contiguous chunks. Callers write disjoint outputs, so the
/// result does not depend on the thread count.
template <typename Fn>
void parallel_for(std::int64_t n, Fn&& fn) {
  const std::int64_t workers = std::min<std::int64_t>(thread_limit(), n);
  if (workers <= 1) {
    for (std::int64_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::exception_ptr error;
  std::mutex error_mutex;
  {
    std::vector<std::jthread> pool;
    const std::int64_t chunk = (n + workers - 1) / workers;
    for (std::int64_t w = 0; w < workers; ++w) {
      pool.emplace_back([&, w] {
        try {
          for (std::int64_t i = w * chunk; i < std::min(n, (w + 1) * chunk); ++i) fn(i);
        } catch (...) {
          std::lock_guard lock(error_mutex);
          if (!error) error = std::current_exception();
        }
      });
    }
  }
  if (error) std::rethrow_exception(error);
}

}  // namespace orbitkit
