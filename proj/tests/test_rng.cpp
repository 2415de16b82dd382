#include <doctest.h>

#include <algorithm>
#include <set>

#include "partmix/rng.hpp"

using namespace partmix;

TEST_CASE("streams are reproducible and independent") {
  Rng a(42), b(42);
  for (int i = 0; i < 10; ++i) CHECK(a() == b());
  const Rng root(7);
  Rng x = root.split("data"), y = root.split("init");
  CHECK(x() != y());
  // Splitting does not consume draws from the parent.
  Rng p(9), q(9);
  (void)p.split("child");
  CHECK(p() == q());
}

TEST_CASE("below stays in range and covers every value") {
  Rng r(3);
  std::set<std::size_t> seen;
  for (int i = 0; i < 2000; ++i) {
    const auto v = r.below(7);
    CHECK(v < 7);
    seen.insert(v);
  }
  CHECK(seen.size() == 7);
}

TEST_CASE("uniform and beta(1) have mean near one half") {
  Rng r(11);
  double su = 0, sb = 0;
  const int n = 20000;
  for (int i = 0; i < n; ++i) {
    const double u = r.uniform();
    CHECK(u >= 0.0);
    CHECK(u < 1.0);
    su += u;
    sb += r.beta(1.0);
  }
  CHECK(su / n == doctest::Approx(0.5).epsilon(0.02));
  CHECK(sb / n == doctest::Approx(0.5).epsilon(0.02));
}

TEST_CASE("beta(2) has the right mean and variance") {
  Rng r(5);
  double s = 0, s2 = 0;
  const int n = 40000;
  for (int i = 0; i < n; ++i) {
    const double x = r.beta(2.0);
    s += x;
    s2 += x * x;
  }
  const double mean = s / n, var = s2 / n - mean * mean;
  CHECK(mean == doctest::Approx(0.5).epsilon(0.02));
  CHECK(var == doctest::Approx(0.05).epsilon(0.05));
}

TEST_CASE("sample_without_replacement returns distinct indices") {
  Rng r(1);
  for (std::size_t n : {1u, 5u, 30u}) {
    for (std::size_t k = 0; k <= n; ++k) {
      auto s = r.sample_without_replacement(n, k);
      CHECK(s.size() == k);
      std::sort(s.begin(), s.end());
      CHECK(std::adjacent_find(s.begin(), s.end()) == s.end());
      CHECK((s.empty() || s.back() < n));
    }
  }
}

TEST_CASE("permutation is a permutation") {
  Rng r(2);
  auto p = r.permutation(50);
  std::sort(p.begin(), p.end());
  for (std::size_t i = 0; i < 50; ++i) CHECK(p[i] == i);
}
