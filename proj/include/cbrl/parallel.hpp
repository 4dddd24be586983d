#pragma once

#include <atomic>
#include <cstddef>
#include <functional>
#include <thread>
#include <vector>

namespace cbrl {

// Runs fn(i) for i in [0, n). Each item must write only its own outputs;
// callers combine results in index order afterwards, so the outcome does not
// depend on scheduling. workers <= 1 runs inline.
inline void parallel_for(size_t n, int workers, const std::function<void(size_t)>& fn) {
  if (workers <= 1 || n <= 1) {
    for (size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<size_t> next{0};
  auto worker = [&] {
    while (true) {
      size_t i = next.fetch_add(1);
      if (i >= n) break;
      fn(i);
    }
  };
  std::vector<std::thread> threads;
  size_t n_threads = std::min(static_cast<size_t>(workers), n);
  threads.reserve(n_threads);
  for (size_t w = 0; w < n_threads; ++w) threads.emplace_back(worker);
  for (auto& t : threads) t.join();
}

}  // namespace cbrl
