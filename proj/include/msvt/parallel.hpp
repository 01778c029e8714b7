#pragma once

#include <cstdint>
#include <functional>

namespace msvt {

// Resolves a requested worker count: 0 means "use hardware concurrency".
int resolve_threads(int requested);

// Runs body(i) for i in [0, n) on up to `threads` workers. Work items must
// write to disjoint state; the schedule is dynamic, so cross-item ordering is
// unspecified. The first exception thrown by any item is rethrown here.
void parallel_for(int64_t n, int threads, const std::function<void(int64_t)>& body);

}  // namespace msvt
