#pragma once

#include <cstddef>
#include <functional>

namespace kwass::parallel {

// Worker count used by parallel_for. Defaults to KWASS_THREADS or 1.
void set_threads(int n);
int threads();

// Runs body(begin, end) over disjoint contiguous chunks of [0, n). Callers only
// use it for work whose per-index results are independent, so the output does
// not depend on the thread count.
void parallel_for(std::size_t n, const std::function<void(std::size_t, std::size_t)>& body);

}  // namespace kwass::parallel
