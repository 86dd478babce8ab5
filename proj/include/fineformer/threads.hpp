// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>

namespace fineformer {

/// Number of OpenMP workers the parallel kernels may use. Defaults to 1.
std::size_t worker_count();

void set_worker_count(std::size_t count);

/// Reads FINEFORMER_THREADS (a positive integer cap); unset or invalid leaves 1.
void configure_workers_from_env();

}  // namespace fineformer
