#pragma once

#include "frepa/tensor.hpp"

#include <algorithm>
#include <exception>
#include <thread>
#include <vector>

namespace frepa {

/// Runs fn(i) for i in [0, n) on up to `jobs` threads. Work is split into
/// contiguous blocks; callers write results by index so the outcome does not
/// depend on scheduling. The first exception thrown is rethrown.
template <typename Fn>
void parallel_for(Index n, int jobs, Fn&& fn) {
  const Index workers = std::clamp<Index>(jobs, 1, std::max<Index>(n, 1));
  if (workers <= 1) {
    for (Index i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::exception_ptr> errors(static_cast<std::size_t>(workers));
  std::vector<std::thread> threads;
  for (Index w = 0; w < workers; ++w)
    threads.emplace_back([&, w] {
      try {
        for (Index i = w * n / workers; i < (w + 1) * n / workers; ++i) fn(i);
      } catch (...) {
        errors[static_cast<std::size_t>(w)] = std::current_exception();
      }
    });
  for (auto& t : threads) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

}  // namespace frepa
