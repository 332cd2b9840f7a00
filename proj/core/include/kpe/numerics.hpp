#pragma once

// Seeded random streams, probability-law helpers and Gauss-Legendre rules.

#include <cstdint>
#include <functional>
#include <random>
#include <vector>

namespace kpe {

/// One round of the splitmix64 finalizer.
std::uint64_t splitmix64(std::uint64_t x);

/// Counter-based seed for the (n, trial) cell of an experiment.
std::uint64_t derive_seed(std::uint64_t base_seed, std::uint64_t n, std::uint64_t trial);

/// Owned generator with platform-independent transforms (no std:: distributions).
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(splitmix64(seed)) {}

  /// Uniform on [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  /// Uniform on the open interval (0, 1).
  double uniform_open() { return (static_cast<double>(engine_() >> 11) + 0.5) * 0x1.0p-53; }
  /// Standard normal by inverse CDF.
  double normal();
  std::uint64_t bits() { return engine_(); }

 private:
  std::mt19937_64 engine_;
};

double normal_cdf(double x);
double normal_survival(double x);
double normal_quantile(double p);
double normal_density(double x);

struct QuadratureRule {
  std::vector<double> nodes;
  std::vector<double> weights;
};

/// n-point Gauss-Legendre rule on [a, b]. Nodes from Newton iteration on P_n.
QuadratureRule gauss_legendre(int n, double a = -1.0, double b = 1.0);

/// Integral of f over [a, b] by an n-point Gauss-Legendre rule.
double integrate_gl(const std::function<double(double)>& f, double a, double b, int n = 256);

/// Adaptive Gauss-Kronrod integral over [a, b]; either limit may be infinite.
double integrate_adaptive(const std::function<double(double)>& f, double a, double b,
                          double tolerance = 1e-10);

}  // namespace kpe
