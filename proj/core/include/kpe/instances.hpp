#pragma once

// Generative problem definitions: state laws, propensities, regression functions, noise,
// weight functionals, sampling and ground-truth targets.

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "kpe/numerics.hpp"
#include "kpe/point.hpp"

namespace kpe {

enum class StateLaw { kUniform01, kStdNormal, kStdLogistic, kStdCauchy };

std::string to_string(StateLaw law);
StateLaw state_law_from_string(const std::string& name);

/// Inverse CDF of a scalar state law; p in (0, 1).
double state_quantile(StateLaw law, double p);
double state_density(StateLaw law, double x);
double state_cdf(StateLaw law, double x);
bool has_interval_support(StateLaw law);

/// Probability of action 1 given a scalar state.
struct Propensity {
  enum class Kind { kSingular, kLogisticCdf, kNormalSurvival, kConstant };
  Kind kind = Kind::kConstant;
  double parameter = 0.5;  // exponent for kSingular, level for kConstant

  static Propensity singular(double alpha) { return {Kind::kSingular, alpha}; }
  static Propensity logistic_cdf() { return {Kind::kLogisticCdf, 0.0}; }
  static Propensity normal_survival() { return {Kind::kNormalSurvival, 0.0}; }
  static Propensity constant(double p) { return {Kind::kConstant, p}; }

  double operator()(double s) const;
  std::string describe() const;
};

/// Named regression function mu*(s, a) with its parameters kept for serialization.
struct Regression {
  std::string name;
  std::vector<double> params;
  std::function<double(const Point&)> eval;

  double operator()(const Point& u) const { return eval(u); }

  /// mu = c on every action.
  static Regression constant(double c);
  /// 1 + cos(s) on action 1, 0 on action 0.
  static Regression one_plus_cos();
  /// c (s - s^2 / 2) on action 1, 0 on action 0. The default c = sqrt(3)/2 gives min-kernel norm 1/2.
  static Regression smooth_ramp(double c = 0.8660254037844386);
  /// 1 + amplitude * cos(2 pi (sum s - sum a)) on the torus.
  static Regression cosine_wave(double amplitude = 0.5);

  static Regression from_name(const std::string& name, const std::vector<double>& params);
};

/// Gaussian noise scale sigma(s, a).
struct NoiseModel {
  enum class Kind { kConstant, kStateLinear };
  Kind kind = Kind::kConstant;
  double low = 1.0;   // constant sigma, or sigma at the left end
  double high = 1.0;  // sigma at the right end for kStateLinear

  static NoiseModel constant(double sigma) { return {Kind::kConstant, sigma, sigma}; }
  /// sigma(s) = low + (high - low) * g(s) with g the state law's CDF (identity on [0, 1]).
  static NoiseModel state_linear(double low, double high) { return {Kind::kStateLinear, low, high}; }

  double sigma(StateLaw law, const Point& u) const;
  double sigma_min() const { return std::min(low, high); }
  double sigma_max() const { return std::max(low, high); }
};

/// Deterministic target policy T : state -> action.
struct PolicyMap {
  std::string name;
  std::vector<double> params;
  std::function<Action(const Eigen::VectorXd&)> map;

  Action operator()(const Eigen::VectorXd& s) const { return map(s); }

  static PolicyMap identity();
  static PolicyMap constant(double c, int action_dim);
  /// a = (s + c) mod 1 coordinatewise.
  static PolicyMap shift(double c);
  /// Binary a = 1[s_0 >= c].
  static PolicyMap threshold(double c);
  static PolicyMap from_name(const std::string& name, const std::vector<double>& params, int action_dim);
};

struct MissingDataWeight {};
struct TreatmentEffectWeight {};
struct StochasticPolicyWeight {
  std::vector<double> probabilities;  // over labels 0..K-1
};
struct DeterministicPolicyWeight {
  PolicyMap policy;
};

/// The signed measure omega(. | s) defining the target functional.
class WeightFunctional {
 public:
  using Variant =
      std::variant<MissingDataWeight, TreatmentEffectWeight, StochasticPolicyWeight, DeterministicPolicyWeight>;

  WeightFunctional() : v_(MissingDataWeight{}) {}
  explicit WeightFunctional(Variant v);

  static WeightFunctional missing_data() { return WeightFunctional(MissingDataWeight{}); }
  static WeightFunctional treatment_effect() { return WeightFunctional(TreatmentEffectWeight{}); }
  static WeightFunctional stochastic_policy(std::vector<double> p) {
    return WeightFunctional(StochasticPolicyWeight{std::move(p)});
  }
  static WeightFunctional deterministic_policy(PolicyMap t) {
    return WeightFunctional(DeterministicPolicyWeight{std::move(t)});
  }

  const Variant& variant() const { return v_; }

  /// Finite support of omega(. | s) as (action, signed mass) pairs.
  std::vector<std::pair<Action, double>> atoms(const Eigen::VectorXd& state) const;
  double total_variation(const Eigen::VectorXd& state) const;
  std::string describe() const;

 private:
  Variant v_;
};

/// Full generative model. Binary actions when action_dim == 0; otherwise actions are uniform on
/// the torus [0, 1)^action_dim and states uniform on [0, 1)^state_dim.
struct ProblemInstance {
  std::string family = "custom";
  StateLaw state_law = StateLaw::kUniform01;
  int state_dim = 1;
  int action_dim = 0;
  Propensity propensity;
  Regression regression = Regression::constant(0.0);
  NoiseModel noise = NoiseModel::constant(1.0);
  WeightFunctional omega;
  double rkhs_radius = 1.0;
  nlohmann::json params = nlohmann::json::object();  // builder arguments, for descriptors

  bool binary_actions() const { return action_dim == 0; }
  std::string tag() const;
};

ProblemInstance singular_missing_data(double alpha, std::optional<Regression> mu = std::nullopt);
ProblemInstance heavy_tail_study(StateLaw law, Propensity::Kind propensity);
ProblemInstance continuum_bandit(int state_dim, int action_dim, double smoothness, PolicyMap policy,
                                 std::optional<Regression> mu = std::nullopt);
/// Missing-data instance with any scalar law and propensity.
ProblemInstance missing_data_instance(StateLaw law, Propensity propensity, Regression mu,
                                      NoiseModel noise = NoiseModel::constant(1.0));

nlohmann::json instance_to_json(const ProblemInstance& inst);
/// Throws ConfigError listing every bad field.
ProblemInstance instance_from_json(const nlohmann::json& j);

/// n observations stored column-wise.
struct Dataset {
  Eigen::MatrixXd states;      // n x d_x
  std::vector<int> labels;     // binary instances
  Eigen::MatrixXd actions;     // n x d_a, continuum instances
  Eigen::VectorXd outcomes;
  std::uint64_t seed = 0;
  std::string instance_tag;

  Eigen::Index size() const { return outcomes.size(); }
  bool binary() const { return actions.cols() == 0; }
  Point point(Eigen::Index i) const;
  std::vector<Point> points() const;
  /// Rows [begin, end).
  Dataset slice(Eigen::Index begin, Eigen::Index end) const;
  std::vector<double> scalar_states() const;
  /// Concatenates rows of two datasets with the same layout.
  static Dataset concat(const Dataset& a, const Dataset& b);
};

/// Draws (X, A) from xi * pi only; outcome column is zero.
std::vector<Point> sample_state_actions(const ProblemInstance& inst, int m, std::uint64_t seed);

Dataset sample_dataset(const ProblemInstance& inst, Eigen::Index n, std::uint64_t seed);

/// How expectations over the state law are computed.
struct IntegrationSpec {
  enum class Method { kAuto, kGaussLegendre, kAdaptive, kMonteCarlo };
  Method method = Method::kAuto;
  int nodes = 256;
  int draws = 100000;
  std::uint64_t seed = 0;
};

struct Expectation {
  double value = 0.0;
  double std_error = 0.0;  // Monte-Carlo only
};

/// E_xi[f(X)]. kAuto uses Gauss-Legendre on [0, 1], adaptive Gauss-Kronrod on R and Monte-Carlo
/// for multivariate states.
Expectation expect_over_states(const ProblemInstance& inst, const std::function<double(const Eigen::VectorXd&)>& f,
                               const IntegrationSpec& spec = {});

/// Draws m states from xi.
Eigen::MatrixXd sample_states(const ProblemInstance& inst, int m, Rng& rng);

/// integral of mu*(x, a) d omega(a | x).
double weighted_outcome(const ProblemInstance& inst, const std::function<double(const Point&)>& mu,
                        const Eigen::VectorXd& state);

struct TrueValueMethod {
  enum class Kind { kAnalytic, kQuadrature, kMonteCarlo };
  Kind kind = Kind::kQuadrature;
  int draws = 1000000;
  std::uint64_t seed = 0;
};

/// tau* = E_xi[ integral mu*(X, a) d omega(a | X) ].
double true_functional(const ProblemInstance& inst, TrueValueMethod method = {});
/// Analytic value if registered.
std::optional<double> analytic_functional(const ProblemInstance& inst);

double true_one_point(const ProblemInstance& inst, const Eigen::VectorXd& x0);

}  // namespace kpe
