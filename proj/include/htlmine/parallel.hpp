#pragma once

#include <cstdint>
#include <functional>

namespace htl {

// Number of worker threads. Reads HTLMINE_THREADS once; defaults to the
// hardware concurrency. Always >= 1.
int thread_count();

// Runs fn(i) for i in [0, n). Work is split into contiguous chunks, one
// chunk per worker, so each index is computed by exactly one thread and
// per-index reduction order never depends on the thread count.
void parallel_for(int64_t n, const std::function<void(int64_t)> & fn);

// Chunked variant: fn(begin, end) over disjoint contiguous ranges.
void parallel_for_chunks(int64_t n, const std::function<void(int64_t, int64_t)> & fn);

} // namespace htl
