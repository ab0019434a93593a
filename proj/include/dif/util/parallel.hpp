#pragma once

#include <cstddef>
#include <functional>

namespace dif::util {

/// Worker count for parallel maps. Defaults to DIF_THREADS or the hardware count.
int threads();
void set_threads(int n);

/// Calls f(begin, end) on contiguous chunks of [0, n), possibly concurrently.
/// Chunk boundaries depend only on n and the thread count.
void parallel_for(std::size_t n, const std::function<void(std::size_t, std::size_t)>& f);

}  // namespace dif::util
