#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

namespace vgkit {

// Worker cap from VG_THREADS (0 or unset = hardware concurrency).
inline unsigned worker_count() {
  unsigned n = 0;
  if (const char* env = std::getenv("VG_THREADS")) {
    try {
      n = static_cast<unsigned>(std::stoul(env));
    } catch (const std::exception&) {
      n = 0;
    }
  }
  if (n == 0) n = std::max(1u, std::thread::hardware_concurrency());
  return n;
}

// Runs fn(i) for i in [0, count) on up to worker_count() threads. Each index
// is visited exactly once; callers write results into slot i and reduce in
// index order afterwards, so the outcome does not depend on scheduling.
// The exception from the lowest failing index is rethrown.
template <typename Fn>
void parallel_for(std::size_t count, Fn&& fn) {
  const std::size_t workers = std::min<std::size_t>(worker_count(), count);
  if (workers <= 1) {
    for (std::size_t i = 0; i < count; ++i) fn(i);
    return;
  }
  std::vector<std::exception_ptr> errors(count);
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      for (std::size_t i = w; i < count; i += workers) {
        try {
          fn(i);
        } catch (...) {
          errors[i] = std::current_exception();
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

}  // namespace vgkit
