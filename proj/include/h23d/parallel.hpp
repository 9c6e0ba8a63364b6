#pragma once

#include <cstddef>
#include <functional>

namespace h23d {

// Process-wide worker count used by parallel_for. 1 means fully serial.
void set_num_threads(int n);
int num_threads();

// Runs fn(i) for every i in [begin, end), split into contiguous chunks.
// Callers only ever write to disjoint outputs from fn, so results do not
// depend on the worker count.
void parallel_for(std::size_t begin, std::size_t end,
                  const std::function<void(std::size_t)>& fn,
                  std::size_t min_chunk = 1);

}  // namespace h23d
