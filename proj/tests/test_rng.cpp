#include <set>

#include "ambl/rng.hpp"
#include "doctest.h"

using namespace ambl;

TEST_SUITE("rng") {
  TEST_CASE("mt19937_64 matches the standard's 10000th value") {
    Rng rng(5489u);
    rng.discard(9999);
    CHECK(rng() == 9981545732273789042ULL);
  }

  TEST_CASE("derived seeds are distinct across streams") {
    std::set<uint64_t> seen;
    for (uint64_t s = 0; s < 1000; ++s) seen.insert(derive_seed(42, s));
    CHECK(seen.size() == 1000);
    CHECK(derive_seed(1, 2) == derive_seed(1, 2));
    CHECK(derive_seed(1, 2) != derive_seed(2, 1));
  }

  TEST_CASE("uniform_below stays in range and is flat") {
    Rng rng(7);
    std::vector<int> counts(7, 0);
    constexpr int kDraws = 70'000;
    for (int i = 0; i < kDraws; ++i) {
      const auto v = uniform_below(rng, 7);
      REQUIRE(v < 7);
      ++counts[v];
    }
    double chi2 = 0.0;
    for (int c : counts) chi2 += (c - 10'000.0) * (c - 10'000.0) / 10'000.0;
    CHECK(chi2 < 22.46);  // chi-square(6) at p = 0.001
  }

  TEST_CASE("uniform_unit in [0, 1) with mean one half") {
    Rng rng(11);
    double sum = 0.0;
    for (int i = 0; i < 100'000; ++i) {
      const double u = uniform_unit(rng);
      REQUIRE(u >= 0.0);
      REQUIRE(u < 1.0);
      sum += u;
    }
    CHECK(sum / 100'000 == doctest::Approx(0.5).epsilon(0.01));
  }

  TEST_CASE("standard_normal moments") {
    Rng rng(13);
    double s = 0.0, s2 = 0.0;
    constexpr int n = 200'000;
    for (int i = 0; i < n; ++i) {
      const double z = standard_normal(rng);
      s += z;
      s2 += z * z;
    }
    CHECK(std::abs(s / n) < 0.01);
    CHECK(s2 / n == doctest::Approx(1.0).epsilon(0.02));
  }

  TEST_CASE("binomial_half moments for 40 trials") {
    Rng rng(17);
    double s = 0.0, s2 = 0.0;
    constexpr int n = 100'000;
    for (int i = 0; i < n; ++i) {
      const int k = binomial_half(rng, 40);
      REQUIRE(k >= 0);
      REQUIRE(k <= 40);
      s += k;
      s2 += double(k) * k;
    }
    const double mean = s / n;
    CHECK(std::abs(mean - 20.0) < 0.1);
    CHECK(std::abs(s2 / n - mean * mean - 10.0) < 0.3);
  }

  TEST_CASE("state round trip resumes the stream") {
    Rng a(99);
    a.discard(123);
    Rng b = rng_from_state(rng_state(a));
    for (int i = 0; i < 10; ++i) CHECK(a() == b());
  }
}
