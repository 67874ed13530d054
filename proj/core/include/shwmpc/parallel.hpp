#pragma once

#include <cstddef>
#include <functional>

namespace shwmpc {

/// Worker count: SHWMPC_THREADS if set (>= 1), else hardware concurrency.
int max_threads();

/// Runs body(i) for i in [0, n) across up to max_threads() threads. Results
/// must be written to per-index slots so the outcome does not depend on the
/// thread count. The first exception thrown by any body is rethrown.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& body);

}  // namespace shwmpc
