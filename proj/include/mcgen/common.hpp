#ifndef MCGEN_COMMON_HPP
#define MCGEN_COMMON_HPP

#include <cstdint>
#include <functional>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace mcgen {

inline constexpr const char* kEngineVersion = "0.1.0";

using Index = std::int64_t;
using Shape = std::vector<Index>;

// Error hierarchy. Every user-facing failure carries a message naming the
// offending operation and its operands.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ShapeError : Error {
  using Error::Error;
};
struct ValueError : Error {
  using Error::Error;
};
struct IoError : Error {
  using Error::Error;
};
struct ConfigError : Error {
  using Error::Error;
};

inline Index numel(const Shape& s) {
  Index n = 1;
  for (Index d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) os << ',';
    os << s[i];
  }
  os << ']';
  return os.str();
}

// Number of worker threads kernels may use. Resolved once from MCGEN_THREADS
// (falls back to hardware concurrency, capped at 8).
int kernel_threads();

// Splits [0, n) into contiguous chunks, one per worker. Each chunk owns a
// disjoint output range, so results do not depend on the thread count.
void parallel_for(Index n, const std::function<void(Index, Index)>& body);

}  // namespace mcgen

#endif  // MCGEN_COMMON_HPP
