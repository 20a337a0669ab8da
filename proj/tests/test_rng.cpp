#include <doctest.h>

#include <cmath>
#include <set>
#include <vector>

#include "kdts/rng.hpp"

using kdts::RngStream;

TEST_CASE("identical keys reproduce identical draws") {
  RngStream a(42, 3, 17), b(42, 3, 17);
  for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());
}

TEST_CASE("streams are keyed by all three components") {
  RngStream base(42, 3, 17);
  RngStream seed(43, 3, 17);
  RngStream epoch(42, 4, 17);
  RngStream index(42, 3, 18);
  const auto x = base.next_u64();
  CHECK(x != seed.next_u64());
  CHECK(x != epoch.next_u64());
  CHECK(x != index.next_u64());
}

TEST_CASE("derived streams with different tags are decorrelated") {
  auto a = RngStream::derive(7, "init");
  auto b = RngStream::derive(7, "shuffle");
  CHECK(a.next_u64() != b.next_u64());
}

TEST_CASE("next_unit stays in [0, 1) with a sane mean") {
  RngStream rng(1, 0, 0);
  double sum = 0.0;
  const int n = 100000;
  for (int i = 0; i < n; ++i) {
    const double u = rng.next_unit();
    REQUIRE(u >= 0.0);
    REQUIRE(u < 1.0);
    sum += u;
  }
  CHECK(std::abs(sum / n - 0.5) < 0.005);
}

TEST_CASE("next_int covers inclusive bounds uniformly enough") {
  RngStream rng(2, 0, 0);
  std::set<std::int64_t> seen;
  for (int i = 0; i < 1000; ++i) {
    const auto v = rng.next_int(3, 7);
    REQUIRE(v >= 3);
    REQUIRE(v <= 7);
    seen.insert(v);
  }
  CHECK(seen.size() == 5);

  for (int i = 0; i < 20; ++i) CHECK(rng.next_int(5, 5) == 5);
}

TEST_CASE("gaussian moments") {
  RngStream rng(3, 0, 0);
  const int n = 200000;
  double sum = 0.0, sum_sq = 0.0;
  for (int i = 0; i < n; ++i) {
    const double g = rng.next_gaussian();
    sum += g;
    sum_sq += g * g;
  }
  const double mean = sum / n;
  const double var = sum_sq / n - mean * mean;
  CHECK(std::abs(mean) < 0.01);
  CHECK(std::abs(var - 1.0) < 0.02);
}
