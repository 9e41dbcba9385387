#include "spinfilter/parallel.hpp"

#include <tbb/blocked_range.h>
#include <tbb/global_control.h>
#include <tbb/parallel_for.h>
#include <tbb/task_arena.h>

#include <atomic>
#include <map>
#include <memory>
#include <mutex>
#include <cstdlib>
#include <string>
#include <thread>

namespace spinfilter {
namespace {

std::size_t default_workers() {
  if (const char* env = std::getenv("SPINFILTER_WORKERS")) {
    try {
      const long v = std::stol(env);
      if (v > 0) return static_cast<std::size_t>(v);
    } catch (...) {
    }
  }
  const unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : hw;
}

thread_local bool in_parallel_region = false;

std::atomic<std::size_t>& configured() {
  static std::atomic<std::size_t> value{0};
  return value;
}

tbb::task_arena& arena_for(std::size_t workers) {
  static std::mutex mutex;
  static std::map<std::size_t, std::unique_ptr<tbb::task_arena>> arenas;
  const std::lock_guard lock(mutex);
  auto& slot = arenas[workers];
  if (!slot) slot = std::make_unique<tbb::task_arena>(static_cast<int>(workers));
  return *slot;
}

}  // namespace

std::size_t worker_count() {
  const std::size_t n = configured().load();
  return n == 0 ? default_workers() : n;
}

void set_worker_count(std::size_t n) { configured().store(n); }

void parallel_for(std::size_t n, const std::function<void(std::size_t)>& body) {
  const std::size_t workers = worker_count();
  if (workers <= 1 || n < 2 || in_parallel_region) {
    for (std::size_t i = 0; i < n; ++i) body(i);
    return;
  }
  tbb::task_arena& arena = arena_for(workers);
  arena.execute([&] {
    tbb::parallel_for(tbb::blocked_range<std::size_t>(0, n),
                      [&](const tbb::blocked_range<std::size_t>& r) {
                        // Nested calls run inline on the worker.
                        const bool outer = in_parallel_region;
                        in_parallel_region = true;
                        for (std::size_t i = r.begin(); i != r.end(); ++i) body(i);
                        in_parallel_region = outer;
                      });
  });
}

ScopedWorkers::ScopedWorkers(std::size_t n) : previous_(configured().load()) {
  set_worker_count(n);
}

ScopedWorkers::~ScopedWorkers() { set_worker_count(previous_); }

}  // namespace spinfilter
