#pragma once

#include <cstddef>
#include <functional>

namespace spinfilter {

/// Number of worker threads used by parallel_for. Initialized from the
/// SPINFILTER_WORKERS environment variable, else hardware concurrency.
std::size_t worker_count();

/// Caps the worker count for the remainder of the process (0 restores default).
void set_worker_count(std::size_t n);

/// Runs body(i) for i in [0, n). Each index must write only to its own
/// output slot; the result is then independent of the schedule.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& body);

/// Runs fn(begin, end) over fixed-size blocks of [0, n). Block boundaries
/// do not depend on the worker count, so per-block scratch is safe.
template <class F>
void parallel_for_blocks(std::size_t n, std::size_t block, F&& fn) {
  if (block == 0) block = 1;
  const std::size_t blocks = (n + block - 1) / block;
  parallel_for(blocks, [&](std::size_t b) {
    const std::size_t begin = b * block;
    const std::size_t end = begin + block < n ? begin + block : n;
    fn(begin, end);
  });
}

/// RAII guard that sets the worker count and restores the previous value.
class ScopedWorkers {
 public:
  explicit ScopedWorkers(std::size_t n);
  ~ScopedWorkers();
  ScopedWorkers(const ScopedWorkers&) = delete;
  ScopedWorkers& operator=(const ScopedWorkers&) = delete;

 private:
  std::size_t previous_;
};

}  // namespace spinfilter
