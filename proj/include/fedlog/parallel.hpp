#pragma once

#include <cstddef>
#include <functional>

namespace fedlog {

/// Runs fn(0..n-1) on up to `threads` threads (inline when threads <= 1) and
/// rethrows the first exception after all workers finish.
void parallel_for(std::size_t n, std::size_t threads, const std::function<void(std::size_t)>& fn);

}  // namespace fedlog
