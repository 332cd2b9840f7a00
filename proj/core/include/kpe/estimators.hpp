#pragma once

// Outcome-regression pipelines (two-stage, four-stage, one-point), conditional-variance
// estimators and inverse-propensity baselines.

#include <Eigen/Dense>

#include <cstdint>
#include <optional>
#include <variant>
#include <vector>

#include "kpe/instances.hpp"
#include "kpe/kernels.hpp"

namespace kpe {

/// Which linear solver krr_fit uses.
enum class SolvePath {
  kAuto,        ///< structured solver for scalar-state Markov kernels, dense otherwise
  kDense,
  kStructured,
};

/// Fitted kernel ridge regression mu_hat(u) = sum_i alpha_i K(u, u_i).
struct KrrModel {
  explicit KrrModel(KernelSpec k) : kernel(std::move(k)) {}

  std::vector<Point> training_points;
  Eigen::VectorXd dual_coefficients;
  KernelSpec kernel;
  double ridge = 0.0;
  std::optional<Eigen::VectorXd> weights;

  double predict(const Point& u) const;
  Eigen::VectorXd predict(const std::vector<Point>& queries) const;

 private:
  friend KrrModel krr_fit(const Dataset&, const KernelSpec&, double, const std::optional<Eigen::VectorXd>&,
                          SolvePath);
  friend KrrModel krr_fit_targets(const Dataset&, const Eigen::VectorXd&, const KernelSpec&, double,
                                  const std::optional<Eigen::VectorXd>&, SolvePath);
  // Scalar copies of the training points for the structured predictor.
  std::vector<double> scalar_states_;
  std::vector<int> scalar_labels_;
  bool structured_ = false;
};

/// Ridge regression of the outcomes on the slice's state-action pairs.
KrrModel krr_fit(const Dataset& data, const KernelSpec& kernel, double ridge,
                 const std::optional<Eigen::VectorXd>& weights = std::nullopt, SolvePath path = SolvePath::kAuto);

/// Ridge regression of arbitrary targets on the slice's state-action pairs.
KrrModel krr_fit_targets(const Dataset& data, const Eigen::VectorXd& targets, const KernelSpec& kernel,
                         double ridge, const std::optional<Eigen::VectorXd>& weights = std::nullopt,
                         SolvePath path = SolvePath::kAuto);

/// (1/m) sum_i integral mu_hat(x_i, a) d omega(a | x_i) over the rows of `states`.
double functional_average(const KrrModel& model, const Eigen::MatrixXd& states, const WeightFunctional& omega);

struct OptEmpiricalRidge {
  double scale = 0.5;  // rho_n = scale / n
};
struct TheoryRidge {
  double sigma_bar = 1.0;
  double radius = 1.0;
};
struct WeakAssumptionRidge {
  double sigma_bar = 1.0;
  double radius = 1.0;
  double kappa = 1.0;
  double delta = 0.05;
};
struct CrossValidatedRidge {
  std::vector<double> grid;  // empty: 20 log-spaced points in [1e-4 / n, 1e2 / n]
  int folds = 5;
  std::uint64_t seed = 0;
};
struct FixedRidge {
  double ridge = 1e-3;
};

using RegularizationPolicy =
    std::variant<OptEmpiricalRidge, TheoryRidge, WeakAssumptionRidge, CrossValidatedRidge, FixedRidge>;

/// Ridge for a fit on `data` (n = its size). Cross-validation runs on `data` itself.
double resolve_ridge(const RegularizationPolicy& policy, const Dataset& data, const KernelSpec& kernel);

/// Default cross-validation grid for sample size n.
std::vector<double> default_cv_grid(Eigen::Index n);

/// k-fold CV mean squared prediction error; ties go to the larger ridge.
double cv_select_ridge(const Dataset& data, const KernelSpec& kernel, const std::vector<double>& grid, int folds,
                       std::uint64_t seed);

/// Fits on the first half, averages over the second.
double two_stage_estimate(const Dataset& data, const KernelSpec& kernel, const RegularizationPolicy& policy,
                          const WeightFunctional& omega);
/// Fits on `fit`, averages over `evaluate`.
double two_stage_on(const Dataset& fit, const Dataset& evaluate, const KernelSpec& kernel,
                    const RegularizationPolicy& policy, const WeightFunctional& omega);
/// Mean of the two split orders.
double crossfit_two_stage(const Dataset& data, const KernelSpec& kernel, const RegularizationPolicy& policy,
                          const WeightFunctional& omega);

struct ClampInterval {
  double low = 0.25;
  double high = 4.0;
  double apply(double v) const { return std::min(high, std::max(low, v)); }
};

struct KrrSquaredResiduals {
  KernelSpec kernel;
  RegularizationPolicy policy = OptEmpiricalRidge{};
};
struct LocalAverage {
  std::optional<double> radius;  // default n^(-1/(d0+2))
  int intrinsic_dim = 1;
  /// Scale r_n = (log(1/delta) / (L^2 p0 n))^(1/(d0+2)) when set.
  bool use_confidence_radius = false;
  double lipschitz = 1.0;
  double density_floor = 1.0;
  double delta = 0.05;
};

struct CondVarEstimator {
  std::variant<KrrSquaredResiduals, LocalAverage> method = LocalAverage{};
  std::optional<ClampInterval> clamp;  // default [0.25 sigma_bar^2, 4 sigma_bar^2]
};

struct CondVarValue {
  double value = 0.0;
  bool degenerate = false;  // empty neighbourhood
};

/// Conditional-variance estimate fitted to squared residuals z on `data`.
class FittedCondVar {
 public:
  FittedCondVar(const CondVarEstimator& estimator, const Dataset& data, const Eigen::VectorXd& squared_residuals,
                ClampInterval clamp);

  CondVarValue evaluate(const Point& query) const;
  Eigen::VectorXd evaluate(const std::vector<Point>& queries) const;
  double radius() const { return radius_; }
  const ClampInterval& clamp() const { return clamp_; }

 private:
  ClampInterval clamp_;
  bool local_ = true;
  double radius_ = 0.0;
  Dataset data_;
  Eigen::VectorXd z_;
  // Scalar local averaging: per-label sorted states with prefix sums of z.
  struct Sorted {
    std::vector<double> states;
    std::vector<double> prefix;
  };
  std::vector<std::pair<int, Sorted>> by_label_;
  std::optional<KrrModel> model_;
};

CondVarValue estimate_cond_var(const CondVarEstimator& estimator, const Dataset& data,
                               const Eigen::VectorXd& squared_residuals, const Point& query, double sigma_bar = 1.0);

struct FourStageParams {
  double sigma_bar = 1.0;
  double radius = 1.0;
};

/// Pilot fit, squared residuals, variance-weighted fit, empirical average on four folds.
double four_stage_estimate(const Dataset& data, const KernelSpec& kernel, const CondVarEstimator& condvar,
                           const FourStageParams& params, const WeightFunctional& omega);

/// Stages I-III on three folds, then integral mu_hat(x0, a) d omega(a | x0).
double one_point_estimate(const Dataset& data, const KernelSpec& kernel, const CondVarEstimator& condvar,
                          const FourStageParams& params, const WeightFunctional& omega, const Eigen::VectorXd& x0);

/// (1/n) sum Y_i A_i / pi(X_i).
double ipw_estimate(const Dataset& data, const Propensity& propensity);
/// Same sum restricted to pi(X_i) >= level.
double truncated_ipw_estimate(const Dataset& data, const Propensity& propensity, double level);

/// Truncation rule gamma_n for the IPW baseline.
struct TruncationRule {
  enum class Kind { kNone, kFixed, kLogQuantile, kRootLogQuantile, kInverseRootN };
  Kind kind = Kind::kInverseRootN;
  double value = 0.0;  // kFixed
};
/// gamma_n: pi(log n), pi(sqrt(log n)), 1/sqrt(n), or fixed.
double truncation_level(const TruncationRule& rule, const Propensity& propensity, Eigen::Index n);
/// Rule matching the instance family (logistic: pi(log n); normal: pi(sqrt log n); else 1/sqrt n).
TruncationRule default_truncation_rule(const ProblemInstance& instance);

/// sgn(tau) min(|tau|, R sqrt(kappa)).
double truncate_estimate(double tau, double radius, double kappa);

}  // namespace kpe
