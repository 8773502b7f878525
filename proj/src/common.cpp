#include "mcgen/common.hpp"

#include <algorithm>
#include <cstdlib>
#include <thread>

namespace mcgen {

int kernel_threads() {
  static const int n = [] {
    if (const char* env = std::getenv("MCGEN_THREADS")) {
      int v = std::atoi(env);
      if (v >= 1) return std::min(v, 64);
    }
    unsigned hw = std::thread::hardware_concurrency();
    return static_cast<int>(std::clamp(hw, 1u, 8u));
  }();
  return n;
}

void parallel_for(Index n, const std::function<void(Index, Index)>& body) {
  const int workers = kernel_threads();
  if (n <= 0) return;
  if (workers <= 1 || n < 4) {
    body(0, n);
    return;
  }
  const int k = static_cast<int>(std::min<Index>(workers, n));
  const Index chunk = (n + k - 1) / k;
  std::vector<std::thread> pool;
  pool.reserve(static_cast<std::size_t>(k) - 1);
  for (int t = 1; t < k; ++t) {
    Index lo = t * chunk;
    Index hi = std::min<Index>(lo + chunk, n);
    if (lo >= hi) break;
    pool.emplace_back([&body, lo, hi] { body(lo, hi); });
  }
  body(0, std::min<Index>(chunk, n));
  for (auto& th : pool) th.join();
}

}  // namespace mcgen
