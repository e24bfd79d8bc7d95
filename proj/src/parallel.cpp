#include "aesth/parallel.hpp"

#include <cstdlib>
#include <exception>
#include <string>
#include <thread>
#include <vector>

namespace aesth {

int thread_budget() {
  int hw = static_cast<int>(std::thread::hardware_concurrency());
  if (hw < 1) hw = 1;
  if (const char* env = std::getenv("AESTH_THREADS")) {
    try {
      const int cap = std::stoi(env);
      if (cap >= 1) return std::min(cap, hw);
    } catch (const std::exception&) {
      // unparsable value: fall back to the default
    }
  }
  return hw;
}

void parallel_for(Index n, const std::function<void(Index)>& fn, int threads) {
  if (n <= 0) return;
  if (threads <= 0) threads = thread_budget();
  const Index workers = std::min<Index>(threads, n);
  if (workers <= 1) {
    for (Index i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::exception_ptr> errors(static_cast<std::size_t>(n));
  std::vector<std::thread> pool;
  pool.reserve(static_cast<std::size_t>(workers));
  for (Index t = 0; t < workers; ++t) {
    const Index begin = n * t / workers, end = n * (t + 1) / workers;
    pool.emplace_back([&, begin, end] {
      for (Index i = begin; i < end; ++i) {
        try {
          fn(i);
        } catch (...) {
          errors[static_cast<std::size_t>(i)] = std::current_exception();
        }
      }
    });
  }
  for (auto& th : pool) th.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

}  // namespace aesth
