#pragma once

#include <cstddef>
#include <functional>

namespace unetsr {

/// Upper bound on intra-op worker threads. Read once from `UNETSR_THREADS`;
/// defaults to the hardware concurrency.
std::size_t max_threads();

/// Overrides the thread cap for this process (0 restores the default).
void set_max_threads(std::size_t n);

/// Calls `body(begin, end)` over disjoint chunks of [0, count). Each index is
/// visited by exactly one call, so callers that write per-index results with
/// a fixed inner reduction order stay bit-deterministic. `grain` is the
/// minimum number of indices per chunk; small ranges run inline.
void parallel_for(std::size_t count, std::size_t grain,
                  const std::function<void(std::size_t, std::size_t)>& body);

}  // namespace unetsr
