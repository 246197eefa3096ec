#pragma once

#include <cstddef>
#include <functional>

namespace tpr {

/// Number of worker threads used by all parallel kernels. Defaults to the
/// hardware concurrency; 1 runs everything inline on the calling thread.
int thread_count();
void set_thread_count(int n);

/// Runs body(i) for i in [begin, end). Iterations are split into contiguous
/// blocks, one per thread. Bodies must write disjoint memory; results then do
/// not depend on the thread count. Nested calls run inline.
void parallel_for(std::ptrdiff_t begin, std::ptrdiff_t end,
                  const std::function<void(std::ptrdiff_t)>& body);

/// Splits [0, n) into a fixed number of chunks that does not depend on the
/// thread count, so per-chunk partial reductions combined in chunk order are
/// bit-reproducible.
struct ChunkPlan {
    std::ptrdiff_t n = 0;
    std::ptrdiff_t chunks = 0;

    ChunkPlan(std::ptrdiff_t n, std::ptrdiff_t max_chunks);
    std::ptrdiff_t chunk_begin(std::ptrdiff_t c) const { return n * c / chunks; }
    std::ptrdiff_t chunk_end(std::ptrdiff_t c) const { return n * (c + 1) / chunks; }
};

}  // namespace tpr
