#pragma once

#include <cstddef>
#include <functional>

namespace dtkd {

/// Worker count from DTKD_THREADS, else hardware concurrency (at least 1).
std::size_t default_threads();

/// Runs body(i) for i in [0, n) across up to `threads` workers. Indices are
/// independent, so results written per index do not depend on the thread
/// count. The first exception thrown by any worker is rethrown.
void parallel_for(std::size_t n, std::size_t threads, const std::function<void(std::size_t)>& body);

}  // namespace dtkd
