#pragma once

#include <cstddef>
#include <exception>
#include <functional>

namespace salign {

/// Worker count from SALIGN_THREADS (0 or unset = hardware concurrency).
std::size_t configured_threads();

/// Runs body(i) for i in [0, count) on up to `threads` workers. Each index is
/// executed exactly once; callers write results into per-index slots and
/// reduce them in index order afterwards. The first exception (lowest index)
/// is rethrown after all workers finish.
void parallel_for(std::size_t count, const std::function<void(std::size_t)>& body,
                  std::size_t threads = configured_threads());

}  // namespace salign
