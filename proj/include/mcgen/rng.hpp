#ifndef MCGEN_RNG_HPP
#define MCGEN_RNG_HPP

#include <cstdint>
#include <random>
#include <span>
#include <string_view>
#include <vector>

#include "mcgen/common.hpp"

namespace mcgen {

// Deterministic random stream. The engine is std::mt19937_64 (bit-exact by
// the standard) and all distribution transforms are implemented here rather
// than delegated to the implementation-defined std distributions, so a seed
// fully determines the stream.
class RngStream {
 public:
  explicit RngStream(std::uint64_t seed);

  // Independent substream keyed by (seed, tag, index). Used to decouple
  // parameter init, codebook draws, per-epoch shuffles and noise so that
  // adding one consumer never shifts another one's draws.
  static RngStream derive(std::uint64_t seed, std::string_view tag,
                          std::uint64_t index = 0);

  std::uint64_t next_u64();
  double uniform();                       // [0, 1)
  double uniform(double lo, double hi);   // [lo, hi)
  double normal();                        // N(0, 1)
  bool bernoulli(double p);
  Index uniform_int(Index n);             // {0, ..., n-1}
  Index categorical(std::span<const double> probs);
  double gamma(double alpha);             // Gamma(alpha, 1), alpha > 0
  std::vector<double> dirichlet(std::span<const double> alpha);

  std::vector<Index> permutation(Index n);  // Fisher-Yates

 private:
  std::mt19937_64 eng_;
  bool has_cached_normal_ = false;
  double cached_normal_ = 0.0;
};

// 64-bit FNV-1a, used for tag hashing and checkpoint checksums.
std::uint64_t fnv1a64(std::span<const std::uint8_t> bytes);
std::uint64_t fnv1a64(std::string_view s);

}  // namespace mcgen

#endif  // MCGEN_RNG_HPP
