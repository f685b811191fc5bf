#pragma once

#include <cstddef>
#include <functional>

namespace dsv {

// Worker-thread bound for the parallel-safe stages; 1 (the default) runs
// everything inline. Results are bitwise independent of the thread count:
// parallelized loops write disjoint outputs and draw from counter-derived
// substreams.
void set_worker_threads(int n);
int worker_threads();

// Runs fn(i) for i in [0, n) across the configured workers in disjoint
// contiguous chunks.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

} // namespace dsv
