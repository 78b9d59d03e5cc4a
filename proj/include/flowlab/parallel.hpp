#pragma once

#include <cstddef>
#include <functional>

namespace flowlab {

// Worker count: FLOWLAB_THREADS if set to a positive integer, otherwise the
// hardware concurrency (at least 1).
std::size_t thread_count();

// Calls body(i) for i in [0, count) on up to thread_count() threads. Items
// are claimed dynamically; if any call throws, the exception of the lowest
// failing index is rethrown after all workers stop.
void parallel_for(std::size_t count, const std::function<void(std::size_t)>& body);

}  // namespace flowlab
