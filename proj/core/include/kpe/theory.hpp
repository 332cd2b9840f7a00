#pragma once

// Mercer eigensystems, the instance-dependent variance functional, the semiparametric
// efficiency bound, effective dimension and closed-form minimax rate exponents.

#include <Eigen/Dense>

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "kpe/instances.hpp"
#include "kpe/kernels.hpp"

namespace kpe {

/// Truncated Mercer decomposition under a base measure P* = xi * pi.
class EigenSystem {
 public:
  /// Writes phi_1(u), ..., phi_J(u) into `out`.
  using FeatureFn = std::function<void(const Point&, Eigen::Ref<Eigen::VectorXd>)>;

  struct Analytic {};
  struct Nystrom {
    int m = 0;
    std::uint64_t seed = 0;
    std::vector<Point> sample;  // construction sample
  };
  using Source = std::variant<Analytic, Nystrom>;

  /// Validates eigenvalues (positive, nonincreasing).
  EigenSystem(Eigen::VectorXd eigenvalues, FeatureFn features, std::string base_measure, Source source);

  const Eigen::VectorXd& eigenvalues() const { return eigenvalues_; }
  int truncation() const { return static_cast<int>(eigenvalues_.size()); }
  const std::string& base_measure() const { return base_measure_; }
  const Source& source() const { return source_; }
  bool is_nystrom() const { return std::holds_alternative<Nystrom>(source_); }

  double eval(int j, const Point& u) const;
  Eigen::VectorXd features(const Point& u) const;
  /// Rows are feature vectors at each point.
  Eigen::MatrixXd feature_matrix(const std::vector<Point>& points) const;

  /// lambda_J / lambda_1.
  double truncation_ratio() const { return eigenvalues_[truncation() - 1] / eigenvalues_[0]; }

 private:
  Eigen::VectorXd eigenvalues_;
  FeatureFn features_;
  std::string base_measure_;
  Source source_;
};

/// Min kernel on [0, 1] under uniform states with constant treated mass p, missing-data convention.
struct SobolevUniformFamily {
  double treated_mass = 1.0;
};
/// Periodic Sobolev kernel on the torus under the uniform law.
struct PeriodicSobolevFamily {
  double smoothness = 2.0;
  int state_dim = 1;
  int action_dim = 1;
};

EigenSystem analytic_eigensystem(const SobolevUniformFamily& family, int truncation = 2000);
EigenSystem analytic_eigensystem(const PeriodicSobolevFamily& family, int truncation = 400);

/// Numerical Mercer decomposition from m draws of xi * pi. Keeps eigenvalues above 1e-12 * lambda_max.
EigenSystem nystrom_eigensystem(const KernelSpec& spec, const ProblemInstance& instance, int m,
                                std::uint64_t seed);

struct AverageTarget {};
struct PointTarget {
  Eigen::VectorXd x0;
};
using Target = std::variant<AverageTarget, PointTarget>;

struct FeatureMeanVector {
  Eigen::VectorXd entries;
  Target target;
  double max_std_error = 0.0;  // Monte-Carlo only
};

/// u_j = E_nu[ integral phi_j(X, a) d omega(a | X) ]. Averages use composite Gauss-Legendre on
/// [0, 1] (one panel per 64 modes) and Monte-Carlo elsewhere.
FeatureMeanVector feature_mean_vector(const EigenSystem& eig, const ProblemInstance& instance,
                                      const Target& target, const IntegrationSpec& spec = {});

/// Gamma_jk = E_{xi * pi}[phi_j phi_k / sigma^2] from mc_draws samples, symmetrised.
Eigen::MatrixXd noise_weighted_gram(const EigenSystem& eig, const ProblemInstance& instance, int mc_draws,
                                    std::uint64_t seed);

/// u^T (Gamma + (R^2 n)^-1 Lambda^-1)^-1 u.
double variance_functional(const Eigen::VectorXd& u, const Eigen::MatrixXd& gram,
                           const Eigen::VectorXd& eigenvalues, double radius, double n);

/// Best <theta, u> found by random search over theta with theta^T Lambda^-1 theta <= R^2 n and
/// theta^T Gamma theta <= 1/4.
double variance_functional_lower_witness(const Eigen::VectorXd& u, const Eigen::MatrixXd& gram,
                                         const Eigen::VectorXd& eigenvalues, double radius, double n,
                                         int trials, std::uint64_t seed);

/// Var_xi( integral mu(X, a) d omega(a | X) ).
double v_state(const ProblemInstance& instance, const std::function<double(const Point&)>& mu,
               const IntegrationSpec& spec = {});

struct EfficiencyBound {
  bool infinite = false;
  double value = 0.0;            // valid when finite
  double state_term = 0.0;
  double weighting_term = 0.0;   // E[(d omega / d pi)^2 sigma^2]
};

/// V_xi(mu*) + E_{xi * pi}[(d omega / d pi)^2 sigma^2] with divergence detection.
EfficiencyBound semiparametric_bound(const ProblemInstance& instance, const IntegrationSpec& spec = {});

/// max over grid of sum_j lambda_j phi_j(u)^2 / (lambda_j + rho).
double effective_dimension(const EigenSystem& eig, double rho, const std::vector<Point>& grid);
/// Same from precomputed feature rows.
double effective_dimension(const Eigen::VectorXd& eigenvalues, const Eigen::MatrixXd& feature_rows, double rho);

/// Quasi-uniform grid over the state-action support (512 points by default).
std::vector<Point> default_grid(const ProblemInstance& instance, int size = 512);

struct SingularRateQuery {
  double alpha = 0.0;
  std::optional<double> x0;  // point target when set
};
struct ContinuumRateQuery {
  int state_dim = 1;
  int action_dim = 1;
  double smoothness = 2.0;
  bool point = false;
};
using RateQuery = std::variant<SingularRateQuery, ContinuumRateQuery>;

struct RatePrediction {
  double exponent = 0.0;
  int log_power = 0;
  bool zero_risk = false;
  std::string family;
};

RatePrediction minimax_rate(const RateQuery& query);

}  // namespace kpe
