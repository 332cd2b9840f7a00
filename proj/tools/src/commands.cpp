#include "kpe_cli/commands.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <ostream>

#include "kpe/errors.hpp"
#include "kpe_cli/config.hpp"

namespace kpe::cli {

using nlohmann::json;

namespace {

json number_or_string(double v) {
  if (std::isfinite(v)) return v;
  if (std::isnan(v)) return "nan";
  return v > 0 ? "+inf" : "-inf";
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out << text;
}

std::filesystem::path prepare_out_dir(const std::string& dir) {
  std::filesystem::path p = dir.empty() ? std::filesystem::path(".") : std::filesystem::path(dir);
  std::error_code ec;
  std::filesystem::create_directories(p, ec);
  if (ec) throw IoError("cannot create '" + p.string() + "': " + ec.message());
  return p;
}

template <class Fn>
int guarded(std::ostream& err, Fn&& fn) {
  try {
    return fn();
  } catch (const ConfigError& e) {
    err << "config error:\n";
    for (const auto& f : e.fields()) err << "  " << f << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitFailure;
  }
}

KernelSpec default_theory_kernel(const ProblemInstance& inst) {
  if (inst.family == "continuum_bandit") {
    return KernelSpec::periodic_sobolev(inst.params.at("smoothness").get<double>(), inst.state_dim, inst.action_dim);
  }
  if (inst.state_law == StateLaw::kUniform01 && inst.binary_actions()) return KernelSpec::sobolev_min();
  return KernelSpec::laplacian(2.0);
}

}  // namespace

json load_document(const CommonOptions& opts) {
  if (opts.config_path.empty()) throw ConfigError({"--config: required"});
  json doc = read_json_file(opts.config_path);
  if (opts.seed) doc["base_seed"] = *opts.seed;
  if (opts.workers) doc["workers"] = *opts.workers;
  for (const auto& o : opts.overrides) apply_override(doc, o);
  return doc;
}

std::optional<RatePrediction> predicted_rate(const ProblemInstance& inst, const EstimatorConfig& est) {
  const bool point = est.kind == EstimatorKind::kOnePoint;
  if (inst.family == "singular_missing_data") {
    SingularRateQuery q{inst.params.at("alpha").get<double>(), std::nullopt};
    if (point) q.x0 = (*est.x0)[0];
    return minimax_rate(q);
  }
  if (inst.family == "continuum_bandit") {
    return minimax_rate(ContinuumRateQuery{inst.state_dim, inst.action_dim,
                                           inst.params.at("smoothness").get<double>(), point});
  }
  return std::nullopt;
}

json rate_to_json(const RatePrediction& r) {
  return {{"family", r.family}, {"exponent", r.exponent}, {"log_power", r.log_power}, {"zero_risk", r.zero_risk}};
}

json simulation_summary(const ExperimentConfig& cfg, std::span<const MseCurve> curves) {
  json j;
  j["config"] = experiment_to_json(cfg);
  j["estimators"] = json::array();
  for (const auto& est : cfg.estimators) {
    json e = {{"id", est.id}, {"kind", to_string(est.kind)}, {"tau_star", target_for(cfg, est)}};
    const auto it = std::find_if(curves.begin(), curves.end(), [&](const MseCurve& c) { return c.estimator == est.id; });
    std::int64_t excluded = 0;
    if (it != curves.end()) {
      for (const auto& p : it->points) excluded += p.excluded;
      try {
        const auto fit = loglog_slope(*it);
        e["slope"] = fit.slope;
        e["slope_stderr"] = fit.std_error;
        e["intercept"] = fit.intercept;
      } catch (const InputError& err) {
        e["slope"] = nullptr;
        e["slope_error"] = err.what();
      }
    }
    e["excluded"] = excluded;
    const auto rate = predicted_rate(cfg.instance, est);
    e["predicted"] = rate ? rate_to_json(*rate) : json(nullptr);
    j["estimators"].push_back(std::move(e));
  }
  return j;
}

int cmd_simulate(const CommonOptions& opts, std::ostream& out, std::ostream& err) {
  ExperimentConfig cfg;
  const int parsed = guarded(err, [&] {
    cfg = experiment_from_json(load_document(opts));
    return kExitOk;
  });
  if (parsed != kExitOk) return parsed;
  return guarded(err, [&] {
    const auto records = run_experiment(cfg);
    const auto curves = mse_curves(records);
    const auto dir = prepare_out_dir(opts.out_dir);
    persist_results(records, (dir / "trials.csv").string(), FileFormat::kCsv);
    persist_curves(curves, (dir / "curves.csv").string(), FileFormat::kCsv);
    const json summary = simulation_summary(cfg, curves);
    write_text(dir / "summary.json", summary.dump(2) + "\n");
    for (const auto& e : summary["estimators"]) {
      out << std::left << std::setw(24) << e["id"].get<std::string>();
      if (e["slope"].is_number()) {
        out << " slope " << std::fixed << std::setprecision(3) << e["slope"].get<double>() << " +- "
            << e["slope_stderr"].get<double>() << std::defaultfloat;
      } else {
        out << " slope n/a";
      }
      if (e["predicted"].is_object()) out << "  predicted " << e["predicted"]["exponent"].get<double>();
      out << "  excluded " << e["excluded"].get<std::int64_t>() << "\n";
    }
    out << "wrote " << (dir / "trials.csv").string() << ", curves.csv, summary.json\n";
    return kExitOk;
  });
}

int cmd_rates(const RatesOptions& opts, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    RatesOptions o = opts;
    if (o.family.empty()) {
      if (o.common.config_path.empty()) throw ConfigError({"--family: required without --config"});
      const json doc = load_document(o.common);
      const auto inst = instance_from_json(doc.at("instance"));
      o.family = inst.family;
      if (inst.family == "singular_missing_data") {
        if (o.alphas.empty()) o.alphas = {inst.params.at("alpha").get<double>()};
      } else if (inst.family == "continuum_bandit") {
        o.state_dim = inst.state_dim;
        o.action_dim = inst.action_dim;
        o.smoothness = inst.params.at("smoothness").get<double>();
      } else {
        throw ConfigError({"instance.family: no closed-form rate for '" + inst.family + "'"});
      }
    }
    std::vector<std::pair<std::string, RatePrediction>> rows;
    if (o.family == "singular_missing_data") {
      if (o.alphas.empty()) throw ConfigError({"--alpha: required for singular_missing_data"});
      for (double a : o.alphas) {
        std::ostringstream label;
        label << "alpha=" << a << " average";
        rows.emplace_back(label.str(), minimax_rate(SingularRateQuery{a, std::nullopt}));
        for (double x : o.x0) {
          std::ostringstream pl;
          pl << "alpha=" << a << " point x0=" << x;
          rows.emplace_back(pl.str(), minimax_rate(SingularRateQuery{a, x}));
        }
      }
    } else if (o.family == "continuum_bandit") {
      std::ostringstream base;
      base << "d_x=" << o.state_dim << " d_a=" << o.action_dim << " s=" << o.smoothness;
      rows.emplace_back(base.str() + " average",
                        minimax_rate(ContinuumRateQuery{o.state_dim, o.action_dim, o.smoothness, false}));
      rows.emplace_back(base.str() + " point",
                        minimax_rate(ContinuumRateQuery{o.state_dim, o.action_dim, o.smoothness, true}));
    } else {
      throw ConfigError({"--family: unknown family '" + o.family + "' (singular_missing_data, continuum_bandit)"});
    }
    json table = json::array();
    for (const auto& [label, r] : rows) {
      out << std::left << std::setw(36) << label;
      if (r.zero_risk) {
        out << " zero risk\n";
      } else {
        out << " n^" << r.exponent << (r.log_power ? " log(n)^" + std::to_string(r.log_power) : "") << "\n";
      }
      json row = rate_to_json(r);
      row["target"] = label;
      table.push_back(std::move(row));
    }
    if (!o.common.out_dir.empty()) {
      const auto dir = prepare_out_dir(o.common.out_dir);
      write_text(dir / "rates.json", json{{"rates", table}}.dump(2) + "\n");
    }
    return kExitOk;
  });
}

json evaluate_theory(const json& doc) {
  const auto inst = instance_from_json(doc.at("instance"));
  const json t = doc.value("theory", json::object());
  std::vector<std::string> errors;
  const auto quantity = t.value("quantity", std::string());
  if (quantity != "variance_functional" && quantity != "efficiency_bound" && quantity != "effective_dimension") {
    errors.push_back("theory.quantity: expected variance_functional, efficiency_bound or effective_dimension");
  }
  IntegrationSpec integ;
  integ.nodes = t.value("quadrature_nodes", integ.nodes);
  integ.draws = t.value("mc_draws", integ.draws);
  integ.seed = t.value("seed", std::uint64_t{0});
  const int gram_draws = t.value("gram_draws", 20000);
  const int grid_size = t.value("grid_size", 512);
  const auto n_values = t.value("n", std::vector<double>{});
  const auto rho_values = t.value("rho", std::vector<double>{});
  if (quantity == "variance_functional" && n_values.empty()) errors.push_back("theory.n: required list");
  if (quantity == "effective_dimension" && rho_values.empty()) errors.push_back("theory.rho: required list");
  for (double n : n_values) {
    if (!(n > 0.0)) errors.push_back("theory.n: values must be positive");
  }
  for (double r : rho_values) {
    if (!(r > 0.0)) errors.push_back("theory.rho: values must be positive");
  }
  std::optional<KernelSpec> kernel;
  try {
    kernel = t.contains("kernel") ? kernel_from_json(t.at("kernel")) : default_theory_kernel(inst);
  } catch (const std::exception& e) {
    errors.push_back(std::string("theory.kernel: ") + e.what());
  }
  if (!errors.empty()) throw ConfigError(errors);

  json settings = {{"quantity", quantity},
                   {"quadrature_nodes", integ.nodes},
                   {"mc_draws", integ.draws},
                   {"seed", integ.seed},
                   {"rkhs_radius", inst.rkhs_radius}};
  json result;
  if (quantity == "efficiency_bound") {
    const auto b = semiparametric_bound(inst, integ);
    result = {{"infinite", b.infinite},
              {"value", b.infinite ? json("+inf") : json(b.value)},
              {"state_term", number_or_string(b.state_term)},
              {"weighting_term", b.infinite ? json("+inf") : number_or_string(b.weighting_term)}};
  } else {
    const json es = t.value("eigensystem", json::object());
    const auto method = es.value("method", std::string("auto"));
    const int truncation = es.value("truncation", 0);
    const int m = es.value("nystrom_m", 400);
    const auto eig_seed = es.value("seed", std::uint64_t{0});
    std::optional<EigenSystem> eig;
    const auto* min_k = std::get_if<SobolevMinKernel>(&kernel->family());
    const auto* per_k = std::get_if<PeriodicSobolevKernel>(&kernel->family());
    const bool analytic_min = min_k && min_k->coupling == ActionCoupling::kTreatedOnly &&
                              inst.state_law == StateLaw::kUniform01 && inst.binary_actions();
    const bool analytic_per = per_k && !inst.binary_actions() && inst.family == "continuum_bandit" &&
                              per_k->basis->state_dim() == inst.state_dim && per_k->basis->action_dim() == inst.action_dim;
    if (method == "analytic" || (method == "auto" && (analytic_min || analytic_per))) {
      if (analytic_min) {
        const double mass = inst.propensity.kind == Propensity::Kind::kConstant ? inst.propensity.parameter : 1.0;
        eig = analytic_eigensystem(SobolevUniformFamily{mass},
                                   truncation > 0 ? truncation : (quantity == "variance_functional" ? 200 : 2000));
      } else if (analytic_per) {
        eig = analytic_eigensystem(PeriodicSobolevFamily{per_k->basis->smoothness(), inst.state_dim, inst.action_dim},
                                   truncation > 0 ? truncation : 400);
      } else {
        throw ConfigError({"theory.eigensystem.method: no analytic system for this kernel and instance"});
      }
      settings["eigensystem"] = {{"method", "analytic"}, {"truncation", eig->truncation()}};
    } else if (method == "nystrom" || method == "auto") {
      eig = nystrom_eigensystem(*kernel, inst, m, eig_seed);
      settings["eigensystem"] = {{"method", "nystrom"}, {"nystrom_m", m}, {"seed", eig_seed}, {"truncation", eig->truncation()}};
    } else {
      throw ConfigError({"theory.eigensystem.method: expected auto, analytic or nystrom"});
    }
    settings["kernel"] = kernel_to_json(*kernel);
    settings["truncation_ratio"] = eig->truncation_ratio();
    result = json::array();
    if (quantity == "variance_functional") {
      const auto u = feature_mean_vector(*eig, inst, AverageTarget{}, integ);
      const auto gram = noise_weighted_gram(*eig, inst, gram_draws, integ.seed);
      settings["gram_draws"] = gram_draws;
      settings["feature_mean_max_stderr"] = u.max_std_error;
      for (double n : n_values) {
        result.push_back({{"n", n}, {"value", variance_functional(u.entries, gram, eig->eigenvalues(), inst.rkhs_radius, n)}});
      }
    } else {
      const auto grid = default_grid(inst, grid_size);
      const auto rows = eig->feature_matrix(grid);
      settings["grid_size"] = static_cast<int>(grid.size());
      for (double rho : rho_values) {
        result.push_back({{"rho", rho}, {"value", effective_dimension(eig->eigenvalues(), rows, rho)}});
      }
    }
  }
  return {{"instance", instance_to_json(inst)}, {"settings", settings}, {"result", result}};
}

int cmd_theory(const TheoryOptions& opts, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    json doc = load_document(opts.common);
    if (!doc.contains("theory")) doc["theory"] = json::object();
    if (!opts.quantity.empty()) doc["theory"]["quantity"] = opts.quantity;
    if (!opts.n_values.empty()) doc["theory"]["n"] = opts.n_values;
    if (!opts.rho_values.empty()) doc["theory"]["rho"] = opts.rho_values;
    const json report = evaluate_theory(doc);
    const std::string text = report.dump(2) + "\n";
    out << text;
    if (!opts.common.out_dir.empty()) {
      const auto dir = prepare_out_dir(opts.common.out_dir);
      write_text(dir / "theory.json", text);
    }
    return kExitOk;
  });
}

int cmd_slope(const SlopeOptions& opts, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    if (opts.expected.has_value() != opts.tolerance.has_value()) {
      throw ConfigError({"--expected/--tolerance: give both or neither"});
    }
    if (opts.tolerance && !(*opts.tolerance >= 0.0)) throw ConfigError({"--tolerance: must be >= 0"});
    const auto curves = load_curves(opts.curve_path);
    bool any = false, all_pass = true;
    for (const auto& c : curves) {
      if (!opts.estimator.empty() && c.estimator != opts.estimator) continue;
      any = true;
      const auto fit = loglog_slope(c);
      out << std::left << std::setw(24) << c.estimator << " slope " << std::fixed << std::setprecision(4) << fit.slope
          << " +- " << fit.std_error << std::defaultfloat;
      if (opts.expected) {
        const bool pass = std::abs(fit.slope - *opts.expected) <= *opts.tolerance;
        all_pass = all_pass && pass;
        out << "  expected " << *opts.expected << " tol " << *opts.tolerance << "  " << (pass ? "PASS" : "FAIL");
      }
      out << "\n";
    }
    if (!any) throw InputError("no curve for estimator '" + opts.estimator + "'");
    return all_pass ? kExitOk : kExitFailure;
  });
}

}  // namespace kpe::cli
