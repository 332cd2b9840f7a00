#pragma once

// Subcommands of the kpe tool. Each returns a process exit code:
// 0 success, 1 runtime or acceptance failure, 2 configuration error.

#include <nlohmann/json.hpp>

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "kpe/harness.hpp"
#include "kpe/theory.hpp"

namespace kpe::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitConfig = 2;

struct CommonOptions {
  std::string config_path;
  std::string out_dir;
  std::optional<std::uint64_t> seed;
  std::optional<int> workers;
  std::vector<std::string> overrides;
};

/// Loads the config file and applies --seed, --workers and --set in that order.
nlohmann::json load_document(const CommonOptions& opts);

/// Predicted exponent for an estimator on a registered example family.
std::optional<RatePrediction> predicted_rate(const ProblemInstance& instance, const EstimatorConfig& est);

nlohmann::json rate_to_json(const RatePrediction& rate);

/// Summary written next to the CSV files: config echo, per-estimator slopes and predictions.
nlohmann::json simulation_summary(const ExperimentConfig& config, std::span<const MseCurve> curves);

int cmd_simulate(const CommonOptions& opts, std::ostream& out, std::ostream& err);

struct RatesOptions {
  CommonOptions common;
  std::string family;               // singular_missing_data | continuum_bandit; empty: from --config
  std::vector<double> alphas;
  std::vector<double> x0;           // point targets; empty: average only
  int state_dim = 1;
  int action_dim = 1;
  double smoothness = 2.0;
};
int cmd_rates(const RatesOptions& opts, std::ostream& out, std::ostream& err);

struct TheoryOptions {
  CommonOptions common;
  std::string quantity;  // overrides theory.quantity
  std::vector<double> n_values;
  std::vector<double> rho_values;
};
/// Evaluates a theory quantity; the returned document echoes every numerical setting.
nlohmann::json evaluate_theory(const nlohmann::json& doc);
int cmd_theory(const TheoryOptions& opts, std::ostream& out, std::ostream& err);

struct SlopeOptions {
  std::string curve_path;
  std::optional<double> expected;
  std::optional<double> tolerance;
  std::string estimator;  // empty: all
};
int cmd_slope(const SlopeOptions& opts, std::ostream& out, std::ostream& err);

}  // namespace kpe::cli
