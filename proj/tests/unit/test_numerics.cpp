#include <doctest.h>

#include <cmath>
#include <numbers>
#include <set>

#include "kpe/numerics.hpp"

using namespace kpe;

TEST_CASE("seed derivation is deterministic and collision-free on a grid") {
  CHECK(derive_seed(1, 100, 0) == derive_seed(1, 100, 0));
  std::set<std::uint64_t> seen;
  for (std::uint64_t n : {50, 100, 200, 400}) {
    for (std::uint64_t t = 0; t < 500; ++t) seen.insert(derive_seed(42, n, t));
  }
  CHECK(seen.size() == 2000);
  CHECK(derive_seed(1, 100, 0) != derive_seed(2, 100, 0));
}

TEST_CASE("generator streams repeat and stay in range") {
  Rng a(9), b(9);
  for (int i = 0; i < 1000; ++i) {
    const double u = a.uniform_open();
    CHECK(u == b.uniform_open());
    CHECK(u > 0.0);
    CHECK(u < 1.0);
  }
}

TEST_CASE("normal draws have unit variance") {
  Rng rng(1);
  const int m = 200000;
  double s = 0.0, s2 = 0.0;
  for (int i = 0; i < m; ++i) {
    const double z = rng.normal();
    s += z;
    s2 += z * z;
  }
  CHECK(std::abs(s / m) < 4.0 / std::sqrt(m));
  CHECK(std::abs(s2 / m - 1.0) < 4.0 * std::sqrt(2.0 / m));
}

TEST_CASE("normal law helpers agree") {
  for (double p : {1e-12, 0.01, 0.3, 0.5, 0.9, 1.0 - 1e-9}) CHECK(normal_cdf(normal_quantile(p)) == doctest::Approx(p).epsilon(1e-10));
  CHECK(normal_cdf(0.0) == 0.5);
  CHECK(normal_survival(1.5) == doctest::Approx(1.0 - normal_cdf(1.5)));
  CHECK(normal_density(0.0) == doctest::Approx(1.0 / std::sqrt(2.0 * std::numbers::pi)));
}

TEST_CASE("Gauss-Legendre rules") {
  const auto rule = gauss_legendre(5, 0.0, 2.0);
  double w = 0.0;
  for (double x : rule.weights) w += x;
  CHECK(w == doctest::Approx(2.0));
  // Exact for degree 2n - 1 = 9.
  CHECK(integrate_gl([](double x) { return std::pow(x, 9); }, 0.0, 2.0, 5) == doctest::Approx(102.4).epsilon(1e-13));
  CHECK(integrate_gl([](double x) { return std::sin(x); }, 0.0, std::numbers::pi) == doctest::Approx(2.0).epsilon(1e-14));
}

TEST_CASE("adaptive integration over the real line") {
  const double gauss = integrate_adaptive([](double x) { return std::exp(-x * x); }, -INFINITY, INFINITY);
  CHECK(gauss == doctest::Approx(std::sqrt(std::numbers::pi)).epsilon(1e-10));
  const double cauchy = integrate_adaptive([](double x) { return 1.0 / (std::numbers::pi * (1 + x * x)); }, -INFINITY, INFINITY);
  CHECK(cauchy == doctest::Approx(1.0).epsilon(1e-10));
}
