#pragma once

// Seeded parallel Monte-Carlo runs, MSE aggregation, log-log slopes and result files.

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "kpe/estimators.hpp"
#include "kpe/instances.hpp"

namespace kpe {

enum class EstimatorKind { kTwoStage, kCrossfitTwoStage, kFourStage, kOnePoint, kIpw, kTruncatedIpw };

std::string to_string(EstimatorKind kind);
EstimatorKind estimator_kind_from_string(const std::string& name);

struct EstimatorConfig {
  std::string id;
  EstimatorKind kind = EstimatorKind::kCrossfitTwoStage;
  std::optional<KernelSpec> kernel;  // regression-based kinds
  RegularizationPolicy ridge = OptEmpiricalRidge{};
  /// For cross-validated ridges: average log-ridge of the first runs, then hold it fixed.
  int cv_pilot_runs = 50;
  CondVarEstimator condvar;
  FourStageParams params;
  std::optional<TruncationRule> truncation;  // default follows the instance family
  std::optional<Eigen::VectorXd> x0;         // one-point target
  bool truncate_output = false;
};

struct ExperimentConfig {
  ProblemInstance instance;
  std::vector<EstimatorConfig> estimators;
  std::vector<Eigen::Index> n_grid;
  int trials = 300;
  std::uint64_t base_seed = 0;
  int workers = 1;
  /// Record wall time per trial. Off by default so files are byte-reproducible.
  bool timing = false;
  std::optional<double> tau_star;  // overrides the computed target for average functionals
};

/// Throws ConfigError listing every problem.
void validate(const ExperimentConfig& config);

struct TrialRecord {
  std::string estimator;
  std::int64_t n = 0;
  std::int64_t trial = 0;
  std::uint64_t seed = 0;
  double estimate = 0.0;
  double tau_star = 0.0;
  double sq_error = 0.0;
  std::string status = "ok";
  double wall_ms = 0.0;

  bool ok() const { return status == "ok"; }
  friend bool operator==(const TrialRecord&, const TrialRecord&) = default;
};

/// Target value each estimator is scored against.
double target_for(const ExperimentConfig& config, const EstimatorConfig& est);

/// Records ordered by (estimator, n, trial). Deterministic in the config, independent of workers.
std::vector<TrialRecord> run_experiment(const ExperimentConfig& config);

/// Ridge the harness uses for a cross-validated estimator at sample size n.
double pilot_ridge(const ExperimentConfig& config, const EstimatorConfig& est, Eigen::Index n);

struct CurvePoint {
  std::int64_t n = 0;
  std::int64_t trials = 0;  // included trials
  double mse = 0.0;
  double std_error = 0.0;
  std::int64_t excluded = 0;
  friend bool operator==(const CurvePoint&, const CurvePoint&) = default;
};

struct MseCurve {
  std::string estimator;
  std::vector<CurvePoint> points;
  friend bool operator==(const MseCurve&, const MseCurve&) = default;
};

/// MSE per n against tau_star; failed or non-finite trials are excluded and counted.
MseCurve mse_curve(std::span<const TrialRecord> records, double tau_star);
/// One curve per estimator, each scored against its records' tau_star.
std::vector<MseCurve> mse_curves(std::span<const TrialRecord> records);

struct SlopeFit {
  double slope = 0.0;
  double std_error = 0.0;
  double intercept = 0.0;
};

/// OLS of ln(MSE) on ln(n).
SlopeFit loglog_slope(const MseCurve& curve);

enum class FileFormat { kCsv, kJson };

/// Shortest round-trip decimal.
std::string format_double(double v);
double parse_double(std::string_view text);

void persist_results(std::span<const TrialRecord> records, const std::string& path, FileFormat format,
                     const nlohmann::json& config_echo = nullptr);
void persist_curves(std::span<const MseCurve> curves, const std::string& path, FileFormat format,
                    const nlohmann::json& config_echo = nullptr);
/// Format chosen by extension (.json, otherwise CSV).
std::vector<TrialRecord> load_results(const std::string& path);
std::vector<MseCurve> load_curves(const std::string& path);

std::string trials_csv(std::span<const TrialRecord> records);
std::string curves_csv(std::span<const MseCurve> curves);

/// Runs fn(i) for i in [0, count) on up to `workers` threads.
void parallel_for(std::size_t count, int workers, const std::function<void(std::size_t)>& fn);

}  // namespace kpe
