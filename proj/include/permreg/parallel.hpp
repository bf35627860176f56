#pragma once

#include <exception>
#include <thread>
#include <vector>

namespace permreg {

inline int resolve_threads(int requested) {
  if (requested > 0) return requested;
  const unsigned hc = std::thread::hardware_concurrency();
  return hc > 0 ? static_cast<int>(hc) : 1;
}

// Runs fn(i) for i in [0, count) across a fixed number of threads with
// static striping.  Work items must be independent; results should be
// written to preallocated slots indexed by i, which keeps the overall
// output identical for every thread count.
template <typename Fn>
void parallel_for(int count, int threads, Fn&& fn) {
  if (count <= 0) return;
  const int nt = std::min(resolve_threads(threads), count);
  if (nt <= 1) {
    for (int i = 0; i < count; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  pool.reserve(nt);
  std::vector<std::exception_ptr> errors(nt);
  for (int t = 0; t < nt; ++t) {
    pool.emplace_back([&, t]() {
      try {
        for (int i = t; i < count; i += nt) fn(i);
      } catch (...) {
        errors[t] = std::current_exception();
      }
    });
  }
  for (auto& th : pool) th.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

}  // namespace permreg
