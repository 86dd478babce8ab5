// SPDX-License-Identifier: Apache-2.0
#include "fineformer/threads.hpp"

#include <omp.h>

#include <atomic>
#include <cstdlib>
#include <string>

namespace fineformer {
namespace {
std::atomic<std::size_t> g_workers{1};
}

std::size_t worker_count() { return g_workers.load(std::memory_order_relaxed); }

void set_worker_count(std::size_t count) {
  if (count == 0) count = 1;
  g_workers.store(count, std::memory_order_relaxed);
  omp_set_num_threads(static_cast<int>(count));
}

void configure_workers_from_env() {
  const char* raw = std::getenv("FINEFORMER_THREADS");
  std::size_t count = 1;
  if (raw != nullptr) {
    try {
      const long parsed = std::stol(raw);
      if (parsed > 0) count = static_cast<std::size_t>(parsed);
    } catch (const std::exception&) {
    }
  }
  set_worker_count(count);
}

}  // namespace fineformer
