#include "unetsr/parallel.hpp"

#include <atomic>
#include <memory>
#include <cstdlib>
#include <string>
#include <thread>

#include <oneapi/tbb/blocked_range.h>
#include <oneapi/tbb/parallel_for.h>
#include <oneapi/tbb/task_arena.h>

namespace unetsr {

namespace {

std::size_t default_threads() {
  if (const char* env = std::getenv("UNETSR_THREADS")) {
    try {
      const long v = std::stol(env);
      if (v > 0) return static_cast<std::size_t>(v);
    } catch (...) {
      // ignore malformed values
    }
  }
  const auto hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : hw;
}

std::atomic<std::size_t> g_override{0};

}  // namespace

std::size_t max_threads() {
  static const std::size_t from_env = default_threads();
  const auto o = g_override.load();
  return o != 0 ? o : from_env;
}

void set_max_threads(std::size_t n) { g_override.store(n); }

void parallel_for(std::size_t count, std::size_t grain,
                  const std::function<void(std::size_t, std::size_t)>& body) {
  if (count == 0) return;
  const std::size_t threads = max_threads();
  if (threads <= 1 || count <= grain) {
    body(0, count);
    return;
  }
  static thread_local std::size_t arena_threads = 0;
  static thread_local std::unique_ptr<tbb::task_arena> arena;
  if (!arena || arena_threads != threads) {
    arena = std::make_unique<tbb::task_arena>(static_cast<int>(threads));
    arena_threads = threads;
  }
  arena->execute([&] {
    tbb::parallel_for(tbb::blocked_range<std::size_t>(0, count, grain),
                      [&](const tbb::blocked_range<std::size_t>& r) { body(r.begin(), r.end()); });
  });
}

}  // namespace unetsr
