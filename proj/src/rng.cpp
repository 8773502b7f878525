#include "mcgen/rng.hpp"

#include <cmath>
#include <numbers>

namespace mcgen {

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

}  // namespace

std::uint64_t fnv1a64(std::span<const std::uint8_t> bytes) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (std::uint8_t b : bytes) {
    h ^= b;
    h *= 0x100000001b3ull;
  }
  return h;
}

std::uint64_t fnv1a64(std::string_view s) {
  return fnv1a64(std::span<const std::uint8_t>(
      reinterpret_cast<const std::uint8_t*>(s.data()), s.size()));
}

RngStream::RngStream(std::uint64_t seed) : eng_(seed) {}

RngStream RngStream::derive(std::uint64_t seed, std::string_view tag,
                            std::uint64_t index) {
  std::uint64_t h = splitmix64(seed ^ fnv1a64(tag));
  return RngStream(splitmix64(h + 0x9e3779b97f4a7c15ull * (index + 1)));
}

std::uint64_t RngStream::next_u64() { return eng_(); }

double RngStream::uniform() {
  // 53 random bits -> [0, 1) with full double resolution.
  return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double RngStream::uniform(double lo, double hi) {
  return lo + (hi - lo) * uniform();
}

double RngStream::normal() {
  if (has_cached_normal_) {
    has_cached_normal_ = false;
    return cached_normal_;
  }
  // Box-Muller; u1 bounded away from 0.
  double u1 = 0.0;
  do {
    u1 = uniform();
  } while (u1 <= 0.0);
  double u2 = uniform();
  double r = std::sqrt(-2.0 * std::log(u1));
  double a = 2.0 * std::numbers::pi * u2;
  cached_normal_ = r * std::sin(a);
  has_cached_normal_ = true;
  return r * std::cos(a);
}

bool RngStream::bernoulli(double p) { return uniform() < p; }

Index RngStream::uniform_int(Index n) {
  if (n <= 0) throw ValueError("uniform_int: n must be positive");
  // Rejection to avoid modulo bias.
  const std::uint64_t un = static_cast<std::uint64_t>(n);
  const std::uint64_t limit = UINT64_MAX - UINT64_MAX % un;
  std::uint64_t x;
  do {
    x = next_u64();
  } while (x >= limit);
  return static_cast<Index>(x % un);
}

Index RngStream::categorical(std::span<const double> probs) {
  if (probs.empty()) throw ValueError("categorical: empty probability vector");
  double total = 0.0;
  for (double p : probs) {
    if (!(p >= 0.0)) throw ValueError("categorical: negative probability");
    total += p;
  }
  if (total <= 0.0) throw ValueError("categorical: probabilities sum to zero");
  double u = uniform() * total;
  double acc = 0.0;
  for (std::size_t i = 0; i + 1 < probs.size(); ++i) {
    acc += probs[i];
    if (u < acc) return static_cast<Index>(i);
  }
  return static_cast<Index>(probs.size() - 1);
}

double RngStream::gamma(double alpha) {
  if (!(alpha > 0.0)) throw ValueError("gamma: alpha must be positive");
  if (alpha < 1.0) {
    // Boost: Gamma(a) = Gamma(a+1) * U^(1/a).
    double u = 0.0;
    do {
      u = uniform();
    } while (u <= 0.0);
    return gamma(alpha + 1.0) * std::pow(u, 1.0 / alpha);
  }
  // Marsaglia-Tsang squeeze method.
  const double d = alpha - 1.0 / 3.0;
  const double c = 1.0 / std::sqrt(9.0 * d);
  for (;;) {
    double x = 0.0;
    double v = 0.0;
    do {
      x = normal();
      v = 1.0 + c * x;
    } while (v <= 0.0);
    v = v * v * v;
    double u = uniform();
    if (u < 1.0 - 0.0331 * x * x * x * x) return d * v;
    if (u > 0.0 &&
        std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v))) {
      return d * v;
    }
  }
}

std::vector<double> RngStream::dirichlet(std::span<const double> alpha) {
  if (alpha.empty()) throw ValueError("dirichlet: empty alpha");
  std::vector<double> out(alpha.size());
  double total = 0.0;
  for (std::size_t i = 0; i < alpha.size(); ++i) {
    out[i] = gamma(alpha[i]);
    total += out[i];
  }
  if (total <= 0.0) total = 1.0;
  for (double& v : out) v /= total;
  return out;
}

std::vector<Index> RngStream::permutation(Index n) {
  std::vector<Index> p(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) p[static_cast<std::size_t>(i)] = i;
  for (Index i = n - 1; i > 0; --i) {
    Index j = uniform_int(i + 1);
    std::swap(p[static_cast<std::size_t>(i)], p[static_cast<std::size_t>(j)]);
  }
  return p;
}

}  // namespace mcgen
