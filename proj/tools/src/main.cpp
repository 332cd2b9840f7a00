#include <CLI11.hpp>

#include <iostream>

#include "kpe_cli/commands.hpp"

namespace {

void add_common(CLI::App* cmd, kpe::cli::CommonOptions& opts, bool with_run_flags) {
  cmd->add_option("--config", opts.config_path, "JSON config file");
  cmd->add_option("--out", opts.out_dir, "Output directory");
  cmd->add_option("--set", opts.overrides, "Override a config value, key=value with dotted keys")->take_all();
  if (with_run_flags) {
    cmd->add_option("--seed", opts.seed, "Base seed override");
    cmd->add_option("--workers", opts.workers, "Worker threads")->check(CLI::PositiveNumber);
  }
}

}  // namespace

int main(int argc, char** argv) {
  using namespace kpe::cli;
  CLI::App app{"Kernel-based linear functional estimation: simulations, rates and theory"};
  app.require_subcommand(1);

  CommonOptions sim;
  auto* simulate = app.add_subcommand("simulate", "Run a Monte-Carlo experiment from a config");
  add_common(simulate, sim, true);
  simulate->get_option("--config")->required();

  RatesOptions rates;
  auto* rates_cmd = app.add_subcommand("rates", "Print minimax rate exponents");
  add_common(rates_cmd, rates.common, false);
  rates_cmd->add_option("--family", rates.family, "singular_missing_data or continuum_bandit");
  rates_cmd->add_option("--alpha", rates.alphas, "Singularity exponents")->delimiter(',');
  rates_cmd->add_option("--x0", rates.x0, "Point targets")->delimiter(',');
  rates_cmd->add_option("--state-dim", rates.state_dim);
  rates_cmd->add_option("--action-dim", rates.action_dim);
  rates_cmd->add_option("--smoothness", rates.smoothness);

  TheoryOptions theory;
  auto* theory_cmd = app.add_subcommand("theory", "Evaluate a theory quantity for an instance");
  add_common(theory_cmd, theory.common, false);
  theory_cmd->get_option("--config")->required();
  theory_cmd->add_option("--quantity", theory.quantity, "variance_functional, efficiency_bound or effective_dimension");
  theory_cmd->add_option("--n", theory.n_values, "Sample sizes")->delimiter(',');
  theory_cmd->add_option("--rho", theory.rho_values, "Ridge levels")->delimiter(',');

  SlopeOptions slope;
  auto* slope_cmd = app.add_subcommand("slope", "Fit log-log slopes to a curve file");
  slope_cmd->add_option("--curve", slope.curve_path, "Curve CSV or JSON")->required();
  slope_cmd->add_option("--expected", slope.expected, "Expected slope");
  slope_cmd->add_option("--tolerance", slope.tolerance, "Allowed deviation");
  slope_cmd->add_option("--estimator", slope.estimator, "Only this estimator id");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitConfig;
  }

  if (*simulate) return cmd_simulate(sim, std::cout, std::cerr);
  if (*rates_cmd) return cmd_rates(rates, std::cout, std::cerr);
  if (*theory_cmd) return cmd_theory(theory, std::cout, std::cerr);
  return cmd_slope(slope, std::cout, std::cerr);
}
