// SPDX-License-Identifier: Apache-2.0
#include "tenslora/parallel.hpp"

#include <algorithm>
#include <cstdlib>
#include <thread>
#include <vector>

namespace tenslora {

std::size_t max_threads() {
  static const std::size_t cap = [] {
    std::size_t hw = std::max(1u, std::thread::hardware_concurrency());
    if (const char* env = std::getenv("TENSLORA_THREADS")) {
      char* end = nullptr;
      long v = std::strtol(env, &end, 10);
      if (end != env && v >= 1) hw = std::min(hw, static_cast<std::size_t>(v));
    }
    return hw;
  }();
  return cap;
}

void parallel_for_chunks(std::size_t begin, std::size_t end, std::size_t min_chunk,
                         const std::function<void(std::size_t, std::size_t)>& body) {
  if (end <= begin) return;
  const std::size_t total = end - begin;
  min_chunk = std::max<std::size_t>(1, min_chunk);
  std::size_t workers = std::min(max_threads(), total / min_chunk);
  if (workers <= 1) {
    body(begin, end);
    return;
  }
  const std::size_t chunk = (total + workers - 1) / workers;
  std::vector<std::thread> pool;
  pool.reserve(workers - 1);
  for (std::size_t w = 1; w < workers; ++w) {
    const std::size_t b = begin + w * chunk;
    if (b >= end) break;
    const std::size_t e = std::min(end, b + chunk);
    pool.emplace_back([&body, b, e] { body(b, e); });
  }
  body(begin, std::min(end, begin + chunk));
  for (auto& t : pool) t.join();
}

}  // namespace tenslora
