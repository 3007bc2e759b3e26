#pragma once

#include <atomic>
#include <cstddef>
#include <exception>
#include <functional>
#include <mutex>
#include <stdexcept>
#include <thread>
#include <vector>

namespace ensel {

// Runs fn(i) for every i in [0, count) using `workers` threads.
//
// workers == 1 executes inline on the calling thread. With more workers a
// shared atomic cursor hands out indices dynamically, which keeps threads
// busy when job costs are uneven (verification queries vary wildly in
// difficulty). Jobs must be independent and write results into pre-sized
// per-index storage; nothing about the output may depend on execution
// order. The first exception thrown by any job is rethrown on the calling
// thread once every worker has stopped; remaining jobs are abandoned.
inline void parallel_for(std::size_t count, std::size_t workers,
                         const std::function<void(std::size_t)>& fn) {
  if (workers == 0) throw std::invalid_argument("parallel_for: workers must be >= 1");
  if (count == 0) return;
  if (workers == 1) {
    for (std::size_t i = 0; i < count; ++i) fn(i);
    return;
  }

  std::atomic<std::size_t> cursor{0};
  std::atomic<bool> failed{false};
  std::exception_ptr first_error;
  std::mutex error_mutex;

  const auto body = [&] {
    while (!failed.load(std::memory_order_relaxed)) {
      const std::size_t i = cursor.fetch_add(1, std::memory_order_relaxed);
      if (i >= count) return;
      try {
        fn(i);
      } catch (...) {
        const std::lock_guard<std::mutex> lock(error_mutex);
        if (!first_error) first_error = std::current_exception();
        failed.store(true, std::memory_order_relaxed);
        return;
      }
    }
  };

  std::vector<std::thread> threads;
  const std::size_t spawn = std::min(workers, count);
  threads.reserve(spawn);
  for (std::size_t t = 0; t < spawn; ++t) threads.emplace_back(body);
  for (auto& th : threads) th.join();
  if (first_error) std::rethrow_exception(first_error);
}

}  // namespace ensel
