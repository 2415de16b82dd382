#include <doctest.h>

#include <cmath>
#include <vector>

#include "partmix/errors.hpp"
#include "partmix/numerics.hpp"
#include "partmix/rng.hpp"

using namespace partmix;

// Reference values below were evaluated once at 40 significant digits and frozen.

TEST_CASE("softmax of 1,2,3 matches the high-precision reference") {
  const auto p = softmax(std::vector<double>{1, 2, 3});
  CHECK(p[0] == doctest::Approx(0.090030573170380457998).epsilon(1e-15));
  CHECK(p[1] == doctest::Approx(0.24472847105479765247).epsilon(1e-15));
  CHECK(p[2] == doctest::Approx(0.66524095577482188953).epsilon(1e-15));
  CHECK(-log_softmax(std::vector<double>{1, 2, 3})[0] == doctest::Approx(2.4076059644443803045).epsilon(1e-15));
}

TEST_CASE("log_sum_exp is stable for large inputs") {
  CHECK(log_sum_exp(std::vector<double>{1000, 1000.5, 999}) == doctest::Approx(1001.104130605336728272048).epsilon(1e-15));
  CHECK(std::isinf(log_sum_exp(std::vector<double>{})));
  const auto p = softmax(std::vector<double>{800, 0});
  CHECK(p[0] == 1.0);
  CHECK(std::isfinite(p[1]));
}

TEST_CASE("softmax rejects non-finite logits") {
  CHECK_THROWS_AS(softmax(std::vector<double>{1, NAN}), NumericError);
}

TEST_CASE("entropy and KL match references") {
  CHECK(shannon_entropy(std::vector<double>{0.7, 0.3}) == doctest::Approx(0.61086430205489346303).epsilon(1e-15));
  CHECK(shannon_entropy(std::vector<double>{1.0, 0.0}) == 0.0);
  CHECK(shannon_entropy(std::vector<double>{0.25, 0.25, 0.25, 0.25}) == doctest::Approx(std::log(4.0)).epsilon(1e-15));
  CHECK(kl_divergence(std::vector<double>{0.7, 0.3}, std::vector<double>{0.4, 0.6}) ==
        doctest::Approx(0.18378689738681228756).epsilon(1e-15));
  CHECK(kl_divergence(std::vector<double>{0.5, 0.5}, std::vector<double>{0.5, 0.5}) == 0.0);
}

TEST_CASE("entropy validates its input") {
  CHECK_THROWS_AS(shannon_entropy(std::vector<double>{0.5, 0.6}), NumericError);
  CHECK_THROWS_AS(shannon_entropy(std::vector<double>{1.5, -0.5}), NumericError);
}

TEST_CASE("kl clamps zero target probabilities") {
  const double kl = kl_divergence(std::vector<double>{1.0, 0.0}, std::vector<double>{0.0, 1.0});
  CHECK(std::isfinite(kl));
  CHECK(kl == doctest::Approx(-std::log(kProbabilityFloor)));
}

TEST_CASE("cosine similarity") {
  CHECK(cosine_similarity(std::vector<double>{1, 2, -1}, std::vector<double>{0.5, -1, 2}) ==
        doctest::Approx(-0.62360956446232356426).epsilon(1e-15));
  CHECK_THROWS_AS(cosine_similarity(std::vector<double>{0, 0}, std::vector<double>{1, 0}), NumericError);
  CHECK_THROWS_AS(cosine_similarity(std::vector<double>{1}, std::vector<double>{1, 0}), ShapeError);
}

TEST_CASE("fd_gradient_check accepts a correct gradient and flags a wrong one") {
  const ScalarFunction f = [](std::span<const double> x) { return x[0] * x[0] * x[1] + std::sin(x[1]); };
  const std::vector<double> x{0.7, -1.3};
  const std::vector<double> good{2 * x[0] * x[1], x[0] * x[0] + std::cos(x[1])};
  CHECK(fd_gradient_check(f, x, good, 1e-5).max_relative_error < 1e-8);
  std::vector<double> bad = good;
  bad[1] *= 1.01;
  const auto r = fd_gradient_check(f, x, bad, 1e-5);
  CHECK(r.max_relative_error > 1e-3);
  CHECK(r.worst_index == 1);
  const std::vector<std::size_t> only{0};
  CHECK(fd_gradient_check(f, x, bad, 1e-5, only).coordinates_checked == 1);
}

TEST_CASE("adam first step moves each coordinate by lr against the gradient sign") {
  std::vector<double> p{1.0, -2.0, 0.5};
  const std::vector<double> g{0.3, -4.0, 1e-3};
  AdamState s(3, 0.01);
  adam_step(p, g, s);
  CHECK(p[0] == doctest::Approx(1.0 - 0.01 * 0.3 / (0.3 + 1e-8)).epsilon(1e-14));
  CHECK(p[1] == doctest::Approx(-2.0 + 0.01 * 4.0 / (4.0 + 1e-8)).epsilon(1e-14));
  CHECK(p[2] == doctest::Approx(0.5 - 0.01 * 1e-3 / (1e-3 + 1e-8)).epsilon(1e-14));
  CHECK(s.step_count == 1);
}

TEST_CASE("adam follows the bias-corrected recurrences over several steps") {
  std::vector<double> p{0.2};
  AdamState s(1, 0.05, 0.9, 0.999, 1e-8);
  double m = 0, v = 0, ref = 0.2;
  for (int t = 1; t <= 5; ++t) {
    const double g = 2.0 * p[0] - 0.1 * t;
    m = 0.9 * m + 0.1 * g;
    v = 0.999 * v + 0.001 * g * g;
    ref -= 0.05 * (m / (1 - std::pow(0.9, t))) / (std::sqrt(v / (1 - std::pow(0.999, t))) + 1e-8);
    adam_step(p, std::vector<double>{g}, s);
    CHECK(p[0] == doctest::Approx(ref).epsilon(1e-14));
  }
}

TEST_CASE("tensor shape checks") {
  CHECK(Tensor({2, 3}).size() == 6);
  CHECK_THROWS_AS(Tensor({2, 3}, std::vector<double>(5)), ShapeError);
}

TEST_CASE("softmax degenerate inputs") {
  const auto a = softmax(std::vector<double>{0, 0});
  CHECK(a[0] == 0.5);
  CHECK(a[1] == 0.5);
  for (double v : softmax(std::vector<double>{1000, 1000, 1000})) CHECK(v == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
}

TEST_CASE("entropy and kl closed forms") {
  CHECK(shannon_entropy(std::vector<double>{1, 0, 0, 0}) == 0.0);
  CHECK(kl_divergence(std::vector<double>{1, 0}, std::vector<double>{0.5, 0.5}) == doctest::Approx(std::log(2.0)).epsilon(1e-15));
}

TEST_CASE("cosine closed forms") {
  const std::vector<double> x{0.3, -1.2, 2.0};
  const std::vector<double> neg{-0.3, 1.2, -2.0};
  CHECK(cosine_similarity(x, x) == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(cosine_similarity(x, neg) == doctest::Approx(-1.0).epsilon(1e-15));
  CHECK(cosine_similarity(std::vector<double>{1, 0}, std::vector<double>{1, 1}) == doctest::Approx(1.0 / std::sqrt(2.0)).epsilon(1e-15));
}

TEST_CASE("cosine_backward agrees with finite differences") {
  Rng rng(4);
  std::vector<double> ab(10);
  for (auto& v : ab) v = rng.normal();
  const ScalarFunction f = [](std::span<const double> p) { return cosine_similarity(p.first(5), p.subspan(5)); };
  std::vector<double> g(10, 0.0);
  cosine_backward(std::span(ab).first(5), std::span(ab).subspan(5), 1.0, std::span(g).first(5), std::span(g).subspan(5));
  CHECK(fd_gradient_check(f, ab, g, 1e-5).max_relative_error < 1e-7);
}

TEST_CASE("fd check on the squared norm") {
  const ScalarFunction f = [](std::span<const double> t) { return dot(t, t); };
  const std::vector<double> t{0.4, -1.5, 2.25, 3.0};
  std::vector<double> good(t.size()), wrong(t.size());
  for (std::size_t i = 0; i < t.size(); ++i) {
    good[i] = 2.0 * t[i];
    wrong[i] = 2.1 * t[i];
  }
  CHECK(fd_gradient_check(f, t, good, 1e-5).max_relative_error < 1e-8);
  CHECK(fd_gradient_check(f, t, wrong, 1e-5).max_relative_error > 1e-2);
}

TEST_CASE("adam with a zero gradient leaves parameters unchanged") {
  std::vector<double> p{1.0, 2.0};
  AdamState s(2, 0.1);
  for (int i = 0; i < 3; ++i) adam_step(p, std::vector<double>{0.0, 0.0}, s);
  CHECK(p == std::vector<double>{1.0, 2.0});
}

TEST_CASE("adam trajectories are deterministic") {
  auto run = [] {
    std::vector<double> p{0.5, -0.5, 1.5};
    AdamState s(3, 0.02);
    for (int t = 0; t < 50; ++t) {
      std::vector<double> g(3);
      for (std::size_t i = 0; i < 3; ++i) g[i] = std::sin(p[i] * (t + 1));
      adam_step(p, g, s);
    }
    return p;
  };
  CHECK(run() == run());
}
