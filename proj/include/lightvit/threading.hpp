#pragma once

#include <cstdint>
#include <functional>

namespace lightvit {

// Worker cap for data-parallel kernels. Defaults to 1 (single logical
// context); raised via set_num_threads or the LIGHTVIT_THREADS env var.
// Workers always write disjoint output ranges and every per-element
// reduction runs in a fixed sequential order, so results are bitwise
// identical at any thread count.
int num_threads();
void set_num_threads(int n);
int env_thread_cap();

// Splits [0, n) into contiguous chunks, one per worker.
void parallel_for(int64_t n, const std::function<void(int64_t, int64_t)>& body);

}  // namespace lightvit
