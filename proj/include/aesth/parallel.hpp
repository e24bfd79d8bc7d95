#pragma once

#include <functional>

#include "aesth/tensor.hpp"

namespace aesth {

/// Thread cap from AESTH_THREADS, defaulting to the hardware concurrency.
int thread_budget();

/// Runs fn(i) for i in [0, n) on up to `threads` threads (0 = thread_budget()).
/// Work is split into contiguous index blocks; callers keep results in
/// per-index slots so the outcome does not depend on scheduling. The first
/// exception by index is rethrown after all workers finish.
void parallel_for(Index n, const std::function<void(Index)>& fn, int threads = 0);

}  // namespace aesth
