#pragma once

#include <cstddef>
#include <functional>

namespace loupe {

// Worker cap: min(hardware_concurrency, LOUPE_THREADS if set), at least 1.
int worker_count();

// Runs fn(i) for i in [0,n). Work is split into contiguous index blocks, one
// per worker. Results must be written to disjoint, index-addressed locations;
// cross-index reductions belong to the caller and must run in index order so
// that output is identical for every worker count.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

}  // namespace loupe
