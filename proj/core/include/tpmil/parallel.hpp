#pragma once

#include <cstddef>
#include <functional>

namespace tpmil {

/// Worker cap from TPMIL_THREADS; falls back to hardware concurrency when
/// unset or unparsable. Always >= 1.
std::size_t thread_count_from_env();

/// Runs fn(i) for i in [0, n) on up to `threads` workers. Each index runs
/// exactly once; callers write only to per-index slots. The first exception
/// thrown by any worker is rethrown on the calling thread.
void parallel_for(std::size_t n, std::size_t threads, const std::function<void(std::size_t)>& fn);

}  // namespace tpmil
