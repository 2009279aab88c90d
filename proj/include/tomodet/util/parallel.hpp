#pragma once

#include <cstddef>
#include <functional>

namespace tomodet {

/// Process-wide worker bound, set from `--threads`. 1 means strictly serial.
void set_thread_count(unsigned n);
unsigned thread_count();

/// Runs body(i) for i in [0, n) over contiguous static chunks. Each index is
/// visited exactly once; callers write to per-index slots so the result does
/// not depend on the worker count.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& body);

} // namespace tomodet
