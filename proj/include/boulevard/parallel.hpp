#pragma once

#include <atomic>
#include <cstddef>
#include <functional>
#include <thread>
#include <vector>

namespace boulevard {

// Runs fn(i) for i in [0, count) across worker threads. Each item must write
// only to its own output slot; seeds are derived per item by the caller, so
// results do not depend on the worker count or schedule.
inline void parallel_for(std::size_t count, const std::function<void(std::size_t)>& fn,
                         unsigned max_threads = 0) {
  unsigned hw = std::thread::hardware_concurrency();
  if (hw == 0) hw = 1;
  if (max_threads != 0 && max_threads < hw) hw = max_threads;
  if (hw <= 1 || count <= 1) {
    for (std::size_t i = 0; i < count; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= count) return;
      fn(i);
    }
  };
  std::vector<std::thread> pool;
  const unsigned n_threads = static_cast<unsigned>(std::min<std::size_t>(hw, count));
  pool.reserve(n_threads);
  for (unsigned t = 0; t < n_threads; ++t) pool.emplace_back(worker);
  for (auto& th : pool) th.join();
}

}  // namespace boulevard
