#pragma once

#include <cstddef>
#include <functional>

namespace aslpar {

/// Worker count from the ASLPAR_THREADS environment variable (default 1).
std::size_t thread_count();

/// Runs fn(i) for i in [0, n). Work is split into contiguous chunks, one per
/// worker; callers write results into per-index slots and reduce them in
/// index order afterwards, which keeps results independent of thread count.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

}  // namespace aslpar
