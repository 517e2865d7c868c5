#include <cmath>
#include <vector>

#include "doctest.h"
#include "wmar/rng.hpp"

using wmar::Rng;

TEST_CASE("rng: same seed reproduces the same sequence") {
  Rng a(1234), b(1234);
  for (int i = 0; i < 1000; ++i) CHECK(a.next_u64() == b.next_u64());
}

TEST_CASE("rng: different streams of one seed diverge") {
  Rng a = Rng::stream(7, 0);
  Rng b = Rng::stream(7, 1);
  int equal = 0;
  for (int i = 0; i < 64; ++i)
    if (a.next_u64() == b.next_u64()) ++equal;
  CHECK(equal == 0);
}

TEST_CASE("rng: state round trip is exact") {
  Rng a(99);
  for (int i = 0; i < 17; ++i) a.next_u64();
  const auto snapshot = a.state();
  std::vector<uint64_t> expected;
  for (int i = 0; i < 100; ++i) expected.push_back(a.next_u64());
  Rng b;
  b.set_state(snapshot);
  for (int i = 0; i < 100; ++i) CHECK(b.next_u64() == expected[static_cast<size_t>(i)]);
}

TEST_CASE("rng: uniform01 lies in [0,1) and is roughly centered") {
  Rng r(5);
  double sum = 0.0;
  const int n = 100000;
  for (int i = 0; i < n; ++i) {
    const double u = r.uniform01();
    REQUIRE(u >= 0.0);
    REQUIRE(u < 1.0);
    sum += u;
  }
  // SE of the mean is 1/sqrt(12 n) ~ 0.0009; allow 5 SE.
  CHECK(std::abs(sum / n - 0.5) < 0.005);
}

TEST_CASE("rng: normal has unit variance within Monte Carlo error") {
  Rng r(6);
  double sum = 0.0, sq = 0.0;
  const int n = 100000;
  for (int i = 0; i < n; ++i) {
    const double x = r.normal();
    sum += x;
    sq += x * x;
  }
  const double mean = sum / n;
  const double var = sq / n - mean * mean;
  CHECK(std::abs(mean) < 0.02);
  CHECK(std::abs(var - 1.0) < 0.03);
}

TEST_CASE("rng: categorical matches weights within 3 sigma") {
  Rng r(7);
  const double w[3] = {0.5, 0.3, 0.2};
  int counts[3] = {0, 0, 0};
  const int n = 100000;
  for (int i = 0; i < n; ++i) ++counts[r.categorical(w, 3)];
  for (int i = 0; i < 3; ++i) {
    const double expect = n * w[i];
    const double sigma = std::sqrt(n * w[i] * (1.0 - w[i]));
    CHECK(std::abs(counts[i] - expect) < 3.0 * sigma);
  }
}

TEST_CASE("rng: uniform_int covers the range uniformly") {
  Rng r(8);
  int counts[10] = {};
  const int n = 100000;
  for (int i = 0; i < n; ++i) ++counts[r.uniform_int(10)];
  for (int c : counts) {
    CHECK(c > 9000);
    CHECK(c < 11000);
  }
}
