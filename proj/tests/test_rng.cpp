#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <array>
#include <cmath>

#include "mcgen/rng.hpp"

using namespace mcgen;

TEST_CASE("dirichlet(1,1,1) samples live on the simplex") {
  RngStream rng(1);
  const std::array<double, 3> alpha = {1.0, 1.0, 1.0};
  for (int i = 0; i < 200; ++i) {
    auto v = rng.dirichlet(alpha);
    double total = 0.0;
    for (double x : v) {
      CHECK(x >= 0.0);
      CHECK(x <= 1.0);
      total += x;
    }
    CHECK(total == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("bernoulli(1/2) concentrates at 1e6 draws") {
  RngStream rng(42);
  const int n = 1'000'000;
  long ones = 0;
  for (int i = 0; i < n; ++i) ones += rng.bernoulli(0.5) ? 1 : 0;
  const double mean = static_cast<double>(ones) / n;
  CHECK(std::abs(mean - 0.5) < 0.002);  // ~4 sigma of Binomial(1e6, 1/2)/1e6
}

TEST_CASE("same seed gives a bit-identical stream") {
  RngStream a(777), b(777);
  for (int i = 0; i < 1000; ++i) CHECK(a.next_u64() == b.next_u64());
  RngStream c(777), d(777);
  for (int i = 0; i < 1000; ++i) {
    CHECK(c.uniform() == d.uniform());
  }
  RngStream e(777), f(777);
  for (int i = 0; i < 1000; ++i) CHECK(e.normal() == f.normal());
}

TEST_CASE("derived substreams are stable and distinct") {
  auto a1 = RngStream::derive(5, "init");
  auto a2 = RngStream::derive(5, "init");
  CHECK(a1.next_u64() == a2.next_u64());
  auto b = RngStream::derive(5, "codebook");
  auto c = RngStream::derive(5, "init", 1);
  auto base = RngStream::derive(5, "init");
  CHECK(base.next_u64() != b.next_u64());
  CHECK(RngStream::derive(5, "init").next_u64() != c.next_u64());
}

TEST_CASE("normal moments are sane") {
  RngStream rng(9);
  const int n = 200'000;
  double s = 0.0, s2 = 0.0;
  for (int i = 0; i < n; ++i) {
    double x = rng.normal();
    s += x;
    s2 += x * x;
  }
  CHECK(std::abs(s / n) < 0.01);
  CHECK(std::abs(s2 / n - 1.0) < 0.02);
}

TEST_CASE("categorical follows the probability vector") {
  RngStream rng(12);
  const std::array<double, 3> p = {0.2, 0.5, 0.3};
  std::array<int, 3> counts = {0, 0, 0};
  const int n = 100'000;
  for (int i = 0; i < n; ++i) counts[static_cast<std::size_t>(rng.categorical(p))]++;
  for (int k = 0; k < 3; ++k) {
    CHECK(std::abs(counts[static_cast<std::size_t>(k)] / double(n) - p[static_cast<std::size_t>(k)]) < 0.01);
  }
  CHECK_THROWS_AS(rng.categorical(std::array<double, 2>{-0.1, 1.1}), ValueError);
}

TEST_CASE("gamma(alpha) is positive with the right mean") {
  RngStream rng(3);
  for (double alpha : {0.5, 1.0, 3.0}) {
    double s = 0.0;
    const int n = 50'000;
    for (int i = 0; i < n; ++i) {
      double g = rng.gamma(alpha);
      REQUIRE(g > 0.0);
      s += g;
    }
    CHECK(std::abs(s / n - alpha) < 0.05 * std::max(1.0, alpha));
  }
}

TEST_CASE("permutation is a bijection") {
  RngStream rng(8);
  auto p = rng.permutation(100);
  std::vector<bool> seen(100, false);
  for (Index v : p) {
    REQUIRE(v >= 0);
    REQUIRE(v < 100);
    CHECK(!seen[static_cast<std::size_t>(v)]);
    seen[static_cast<std::size_t>(v)] = true;
  }
}
