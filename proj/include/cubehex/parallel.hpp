#pragma once

#include <cstddef>
#include <functional>

namespace cubehex
{

/// Worker count from CUBEHEX_THREADS (default 1). Values < 1 or unparsable fall back to 1.
int thread_count();

/// Runs fn(i) for i in [0, n) split into contiguous chunks. fn must only write to slots owned
/// by i; callers reduce serially afterwards so results do not depend on the thread count.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

} // namespace cubehex
