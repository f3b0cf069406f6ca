#pragma once

#include <cstddef>
#include <functional>

namespace agggp {

/// Worker cap read from AGGGP_THREADS (0 or unset means hardware concurrency).
std::size_t worker_count();

/// Runs fn(i) for every i in [0, count). Calls must be independent; callers
/// reduce per-index results themselves so the outcome does not depend on the
/// number of workers.
void parallel_for(std::size_t count, const std::function<void(std::size_t)>& fn);

}  // namespace agggp
