// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <functional>

namespace tenslora {

/// Worker cap: min(hardware_concurrency, TENSLORA_THREADS). At least 1.
std::size_t max_threads();

/// Runs body(begin, end) over disjoint chunks of [begin, end), possibly on
/// multiple threads. Chunks never overlap, so bodies with disjoint writes
/// stay deterministic regardless of the thread count. Falls back to a single
/// inline call when the range is shorter than min_chunk or only one worker
/// is available.
void parallel_for_chunks(std::size_t begin, std::size_t end, std::size_t min_chunk,
                         const std::function<void(std::size_t, std::size_t)>& body);

}  // namespace tenslora
