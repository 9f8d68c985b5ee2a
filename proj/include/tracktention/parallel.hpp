#pragma once

#include <cstddef>
#include <functional>

namespace tracktention {

/// Worker count used by the kernels. Defaults to 1 (single-threaded).
std::size_t num_threads();
void set_num_threads(std::size_t n);

/// Calls fn(i) for i in [0, n). Iterations must be independent; work is split
/// into contiguous chunks so per-iteration arithmetic is unchanged.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

}  // namespace tracktention
