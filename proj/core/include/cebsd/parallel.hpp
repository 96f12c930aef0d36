#pragma once

#include <cstddef>
#include <functional>

namespace cebsd {

/// Number of workers to use when the caller passes 0.
std::size_t default_thread_count();

/// Runs body(begin, end) over contiguous chunks of [0, count) on up to `threads` workers.
/// Chunks are fixed by (count, threads), so any per-index work that writes only its own
/// output slot is deterministic. Exceptions from workers are rethrown on the caller.
void parallel_for(std::size_t count, std::size_t threads,
                  const std::function<void(std::size_t, std::size_t)>& body);

}  // namespace cebsd
