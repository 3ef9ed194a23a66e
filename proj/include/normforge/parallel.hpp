#pragma once

#include <cstddef>
#include <functional>

namespace normforge {

/// Worker count: NORMFORGE_THREADS when set, else the hardware concurrency.
unsigned worker_count();

/// Runs fn(i) for i in [0, n) on up to worker_count() threads. The first
/// exception thrown by any task is rethrown once all workers stop.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

}  // namespace normforge
