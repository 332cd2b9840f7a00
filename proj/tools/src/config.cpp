#include "kpe_cli/config.hpp"

#include <fstream>
#include <set>

#include "kpe/errors.hpp"

namespace kpe::cli {

using nlohmann::json;

namespace {

template <class... Ts>
struct Overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
Overloaded(Ts...) -> Overloaded<Ts...>;

ActionCoupling coupling_from(const std::string& name) {
  if (name == "treated_only") return ActionCoupling::kTreatedOnly;
  if (name == "per_action") return ActionCoupling::kPerAction;
  throw InputError("unknown coupling '" + name + "' (treated_only, per_action)");
}

std::string coupling_name(ActionCoupling c) { return c == ActionCoupling::kTreatedOnly ? "treated_only" : "per_action"; }

void reject_unknown(const json& j, std::initializer_list<const char*> allowed) {
  if (!j.is_object()) throw InputError("expected an object");
  const std::set<std::string> ok(allowed.begin(), allowed.end());
  for (const auto& [key, _] : j.items()) {
    if (!ok.count(key)) throw InputError("unknown key '" + key + "'");
  }
}

const std::vector<std::pair<TruncationRule::Kind, const char*>> kRules = {
    {TruncationRule::Kind::kNone, "none"},
    {TruncationRule::Kind::kFixed, "fixed"},
    {TruncationRule::Kind::kLogQuantile, "log_quantile"},
    {TruncationRule::Kind::kRootLogQuantile, "root_log_quantile"},
    {TruncationRule::Kind::kInverseRootN, "inverse_root_n"},
};

TruncationRule truncation_from_json(const json& j) {
  reject_unknown(j, {"rule", "value"});
  TruncationRule rule;
  const auto name = j.at("rule").get<std::string>();
  const auto it = std::find_if(kRules.begin(), kRules.end(), [&](const auto& p) { return name == p.second; });
  if (it == kRules.end()) throw InputError("unknown truncation rule '" + name + "'");
  rule.kind = it->first;
  rule.value = j.value("value", 0.0);
  if (rule.kind == TruncationRule::Kind::kFixed && !(rule.value >= 0.0)) throw InputError("fixed level must be >= 0");
  return rule;
}

json truncation_to_json(const TruncationRule& rule) {
  const auto it = std::find_if(kRules.begin(), kRules.end(), [&](const auto& p) { return rule.kind == p.first; });
  json j = {{"rule", it->second}};
  if (rule.kind == TruncationRule::Kind::kFixed) j["value"] = rule.value;
  return j;
}

CondVarEstimator condvar_from_json(const json& j) {
  reject_unknown(j, {"method", "radius", "intrinsic_dim", "use_confidence_radius", "lipschitz", "density_floor",
                     "delta", "kernel", "ridge", "clamp"});
  CondVarEstimator est;
  const auto method = j.value("method", std::string("local_average"));
  if (method == "local_average") {
    LocalAverage la;
    if (j.contains("radius") && !j.at("radius").is_null()) {
      la.radius = j.at("radius").get<double>();
      if (!(*la.radius > 0.0)) throw InputError("radius must be positive");
    }
    la.intrinsic_dim = j.value("intrinsic_dim", la.intrinsic_dim);
    la.use_confidence_radius = j.value("use_confidence_radius", la.use_confidence_radius);
    la.lipschitz = j.value("lipschitz", la.lipschitz);
    la.density_floor = j.value("density_floor", la.density_floor);
    la.delta = j.value("delta", la.delta);
    if (la.intrinsic_dim < 1) throw InputError("intrinsic_dim must be >= 1");
    est.method = la;
  } else if (method == "krr_squared_residuals") {
    KrrSquaredResiduals k{kernel_from_json(j.at("kernel"))};
    if (j.contains("ridge")) k.policy = ridge_from_json(j.at("ridge"));
    est.method = k;
  } else {
    throw InputError("unknown method '" + method + "' (local_average, krr_squared_residuals)");
  }
  if (j.contains("clamp") && !j.at("clamp").is_null()) {
    const auto c = j.at("clamp").get<std::vector<double>>();
    if (c.size() != 2 || !(c[0] > 0.0) || !(c[1] >= c[0])) throw InputError("clamp must be [low, high] with 0 < low <= high");
    est.clamp = ClampInterval{c[0], c[1]};
  }
  return est;
}

json condvar_to_json(const CondVarEstimator& est) {
  json j = std::visit(Overloaded{
                          [](const LocalAverage& la) {
                            json o = {{"method", "local_average"},
                                      {"intrinsic_dim", la.intrinsic_dim},
                                      {"use_confidence_radius", la.use_confidence_radius},
                                      {"lipschitz", la.lipschitz},
                                      {"density_floor", la.density_floor},
                                      {"delta", la.delta}};
                            o["radius"] = la.radius ? json(*la.radius) : json(nullptr);
                            return o;
                          },
                          [](const KrrSquaredResiduals& k) {
                            return json{{"method", "krr_squared_residuals"},
                                        {"kernel", kernel_to_json(k.kernel)},
                                        {"ridge", ridge_to_json(k.policy)}};
                          },
                      },
                      est.method);
  j["clamp"] = est.clamp ? json::array({est.clamp->low, est.clamp->high}) : json(nullptr);
  return j;
}

}  // namespace

json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError({path + ": cannot open"});
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError({path + ": " + e.what()});
  }
}

void apply_override(json& doc, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError({"--set " + assignment + ": expected key=value"});
  const std::string key = assignment.substr(0, eq), text = assignment.substr(eq + 1);
  json value;
  try {
    value = json::parse(text);
  } catch (const json::parse_error&) {
    value = text;
  }
  json* node = &doc;
  size_t start = 0;
  while (true) {
    const size_t dot = key.find('.', start);
    const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (part.empty()) throw ConfigError({"--set " + key + ": empty path component"});
    if (node->is_array()) {
      size_t idx = 0;
      try {
        size_t used = 0;
        idx = std::stoul(part, &used);
        if (used != part.size()) throw std::invalid_argument(part);
      } catch (const std::exception&) {
        throw ConfigError({"--set " + key + ": '" + part + "' is not an array index"});
      }
      if (idx >= node->size()) throw ConfigError({"--set " + key + ": index " + part + " out of range"});
      node = &(*node)[idx];
    } else {
      if (!node->is_object() && !node->is_null()) throw ConfigError({"--set " + key + ": '" + part + "' is not an object"});
      node = &(*node)[part];
    }
    if (dot == std::string::npos) break;
    start = dot + 1;
  }
  *node = std::move(value);
}

KernelSpec kernel_from_json(const json& j) {
  if (!j.is_object()) throw InputError("expected an object");
  const auto family = j.at("family").get<std::string>();
  if (family == "laplacian") {
    reject_unknown(j, {"family", "scale", "coupling"});
    const double scale = j.value("scale", 2.0);
    if (!(scale > 0.0)) throw InputError("scale must be positive");
    return KernelSpec::laplacian(scale, coupling_from(j.value("coupling", std::string("treated_only"))));
  }
  if (family == "sobolev_min") {
    reject_unknown(j, {"family", "coupling"});
    return KernelSpec::sobolev_min(coupling_from(j.value("coupling", std::string("treated_only"))));
  }
  if (family == "periodic_sobolev") {
    reject_unknown(j, {"family", "smoothness", "state_dim", "action_dim", "truncation"});
    return KernelSpec::periodic_sobolev(j.at("smoothness").get<double>(), j.value("state_dim", 1),
                                        j.value("action_dim", 1), j.value("truncation", 400));
  }
  throw InputError("unknown kernel family '" + family + "' (laplacian, sobolev_min, periodic_sobolev)");
}

json kernel_to_json(const KernelSpec& kernel) {
  return std::visit(Overloaded{
                        [](const LaplacianKernel& k) {
                          return json{{"family", "laplacian"}, {"scale", k.scale}, {"coupling", coupling_name(k.coupling)}};
                        },
                        [](const SobolevMinKernel& k) {
                          return json{{"family", "sobolev_min"}, {"coupling", coupling_name(k.coupling)}};
                        },
                        [](const PeriodicSobolevKernel& k) {
                          return json{{"family", "periodic_sobolev"},
                                      {"smoothness", k.basis->smoothness()},
                                      {"state_dim", k.basis->state_dim()},
                                      {"action_dim", k.basis->action_dim()},
                                      {"truncation", k.basis->size()}};
                        },
                        [](const TabulatedMercerKernel&) -> json {
                          throw InputError("tabulated kernels have no JSON form");
                        },
                    },
                    kernel.family());
}

RegularizationPolicy ridge_from_json(const json& j) {
  if (!j.is_object()) throw InputError("expected an object");
  const auto policy = j.at("policy").get<std::string>();
  if (policy == "opt_empirical") {
    reject_unknown(j, {"policy", "scale"});
    OptEmpiricalRidge r;
    r.scale = j.value("scale", r.scale);
    if (!(r.scale > 0.0)) throw InputError("scale must be positive");
    return r;
  }
  if (policy == "theory") {
    reject_unknown(j, {"policy", "sigma_bar", "radius"});
    TheoryRidge r;
    r.sigma_bar = j.value("sigma_bar", r.sigma_bar);
    r.radius = j.value("radius", r.radius);
    return r;
  }
  if (policy == "weak_assumption") {
    reject_unknown(j, {"policy", "sigma_bar", "radius", "kappa", "delta"});
    WeakAssumptionRidge r;
    r.sigma_bar = j.value("sigma_bar", r.sigma_bar);
    r.radius = j.value("radius", r.radius);
    r.kappa = j.value("kappa", r.kappa);
    r.delta = j.value("delta", r.delta);
    return r;
  }
  if (policy == "cross_validated") {
    reject_unknown(j, {"policy", "grid", "folds", "seed"});
    CrossValidatedRidge r;
    r.grid = j.value("grid", std::vector<double>{});
    r.folds = j.value("folds", r.folds);
    r.seed = j.value("seed", r.seed);
    if (r.folds < 2) throw InputError("folds must be >= 2");
    for (double g : r.grid) {
      if (!(g > 0.0)) throw InputError("grid values must be positive");
    }
    return r;
  }
  if (policy == "fixed") {
    reject_unknown(j, {"policy", "ridge"});
    FixedRidge r{j.at("ridge").get<double>()};
    if (!(r.ridge > 0.0)) throw InputError("ridge must be positive");
    return r;
  }
  throw InputError("unknown ridge policy '" + policy +
                   "' (opt_empirical, theory, weak_assumption, cross_validated, fixed)");
}

json ridge_to_json(const RegularizationPolicy& policy) {
  return std::visit(Overloaded{
                        [](const OptEmpiricalRidge& r) { return json{{"policy", "opt_empirical"}, {"scale", r.scale}}; },
                        [](const TheoryRidge& r) {
                          return json{{"policy", "theory"}, {"sigma_bar", r.sigma_bar}, {"radius", r.radius}};
                        },
                        [](const WeakAssumptionRidge& r) {
                          return json{{"policy", "weak_assumption"},
                                      {"sigma_bar", r.sigma_bar},
                                      {"radius", r.radius},
                                      {"kappa", r.kappa},
                                      {"delta", r.delta}};
                        },
                        [](const CrossValidatedRidge& r) {
                          return json{{"policy", "cross_validated"}, {"grid", r.grid}, {"folds", r.folds}, {"seed", r.seed}};
                        },
                        [](const FixedRidge& r) { return json{{"policy", "fixed"}, {"ridge", r.ridge}}; },
                    },
                    policy);
}

ExperimentConfig experiment_from_json(const json& doc) {
  std::vector<std::string> errors;
  auto guard = [&](const std::string& field, auto&& fn) {
    try {
      fn();
    } catch (const ConfigError& e) {
      errors.insert(errors.end(), e.fields().begin(), e.fields().end());
    } catch (const std::exception& e) {
      errors.push_back(field + ": " + e.what());
    }
  };
  if (!doc.is_object()) throw ConfigError({"document: expected a JSON object"});
  for (const auto& [key, _] : doc.items()) {
    static const std::set<std::string> known = {"schema_version", "instance", "estimators", "n_grid", "trials",
                                                "base_seed", "workers", "timing", "tau_star"};
    if (!known.count(key)) errors.push_back(key + ": unknown key");
  }

  ExperimentConfig cfg;
  guard("schema_version", [&] {
    const int v = doc.at("schema_version").get<int>();
    if (v != kSchemaVersion) throw InputError("unsupported version " + std::to_string(v));
  });
  bool have_instance = false;
  guard("instance", [&] {
    cfg.instance = instance_from_json(doc.at("instance"));
    have_instance = true;
  });
  guard("n_grid", [&] {
    for (auto n : doc.at("n_grid").get<std::vector<std::int64_t>>()) cfg.n_grid.push_back(n);
    if (cfg.n_grid.empty()) throw InputError("must be nonempty");
    for (std::size_t i = 0; i < cfg.n_grid.size(); ++i) {
      if (cfg.n_grid[i] < 1) throw InputError("sizes must be >= 1");
      if (i > 0 && cfg.n_grid[i] <= cfg.n_grid[i - 1]) throw InputError("must be strictly increasing");
    }
  });
  guard("trials", [&] {
    cfg.trials = doc.value("trials", cfg.trials);
    if (cfg.trials < 1) throw InputError("must be >= 1");
  });
  guard("base_seed", [&] { cfg.base_seed = doc.value("base_seed", cfg.base_seed); });
  guard("workers", [&] {
    cfg.workers = doc.value("workers", cfg.workers);
    if (cfg.workers < 1) throw InputError("must be >= 1");
  });
  guard("timing", [&] { cfg.timing = doc.value("timing", cfg.timing); });
  guard("tau_star", [&] {
    if (doc.contains("tau_star") && !doc.at("tau_star").is_null()) cfg.tau_star = doc.at("tau_star").get<double>();
  });

  guard("estimators", [&] {
    const auto& list = doc.at("estimators");
    if (!list.is_array()) throw InputError("expected an array");
    for (size_t k = 0; k < list.size(); ++k) {
      const auto& e = list[k];
      const std::string where = "estimators[" + std::to_string(k) + "]";
      EstimatorConfig est;
      if (!e.is_object()) {
        errors.push_back(where + ": expected an object");
        continue;
      }
      for (const auto& [key, _] : e.items()) {
        static const std::set<std::string> known = {"id", "kind", "kernel", "ridge", "cv_pilot_runs", "condvar",
                                                    "params", "truncation", "x0", "truncate_output"};
        if (!known.count(key)) errors.push_back(where + "." + key + ": unknown key");
      }
      guard(where + ".id", [&] { est.id = e.at("id").get<std::string>(); });
      guard(where + ".kind", [&] { est.kind = estimator_kind_from_string(e.at("kind").get<std::string>()); });
      guard(where + ".kernel", [&] {
        if (e.contains("kernel") && !e.at("kernel").is_null()) est.kernel = kernel_from_json(e.at("kernel"));
      });
      guard(where + ".ridge", [&] {
        if (e.contains("ridge")) est.ridge = ridge_from_json(e.at("ridge"));
      });
      guard(where + ".cv_pilot_runs", [&] {
        est.cv_pilot_runs = e.value("cv_pilot_runs", est.cv_pilot_runs);
        if (est.cv_pilot_runs < 0) throw InputError("must be >= 0");
      });
      guard(where + ".condvar", [&] {
        if (e.contains("condvar")) est.condvar = condvar_from_json(e.at("condvar"));
      });
      guard(where + ".params", [&] {
        if (!e.contains("params")) return;
        const auto& p = e.at("params");
        reject_unknown(p, {"sigma_bar", "radius"});
        est.params.sigma_bar = p.value("sigma_bar", est.params.sigma_bar);
        est.params.radius = p.value("radius", est.params.radius);
        if (!(est.params.sigma_bar > 0.0) || !(est.params.radius > 0.0)) throw InputError("must be positive");
      });
      guard(where + ".truncation", [&] {
        if (e.contains("truncation") && !e.at("truncation").is_null()) est.truncation = truncation_from_json(e.at("truncation"));
      });
      guard(where + ".x0", [&] {
        if (!e.contains("x0") || e.at("x0").is_null()) return;
        const auto& x = e.at("x0");
        const auto v = x.is_number() ? std::vector<double>{x.get<double>()} : x.get<std::vector<double>>();
        est.x0 = Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
      });
      guard(where + ".truncate_output", [&] { est.truncate_output = e.value("truncate_output", false); });
      cfg.estimators.push_back(std::move(est));
    }
  });

  if (errors.empty() && have_instance) guard("config", [&] { validate(cfg); });
  if (!errors.empty()) throw ConfigError(errors);
  return cfg;
}

json experiment_to_json(const ExperimentConfig& cfg) {
  json j;
  j["schema_version"] = kSchemaVersion;
  j["instance"] = instance_to_json(cfg.instance);
  j["n_grid"] = cfg.n_grid;
  j["trials"] = cfg.trials;
  j["base_seed"] = cfg.base_seed;
  j["workers"] = cfg.workers;
  j["timing"] = cfg.timing;
  j["tau_star"] = cfg.tau_star ? json(*cfg.tau_star) : json(nullptr);
  j["estimators"] = json::array();
  for (const auto& e : cfg.estimators) {
    json o;
    o["id"] = e.id;
    o["kind"] = to_string(e.kind);
    o["kernel"] = e.kernel ? kernel_to_json(*e.kernel) : json(nullptr);
    o["ridge"] = ridge_to_json(e.ridge);
    o["cv_pilot_runs"] = e.cv_pilot_runs;
    o["condvar"] = condvar_to_json(e.condvar);
    o["params"] = {{"sigma_bar", e.params.sigma_bar}, {"radius", e.params.radius}};
    o["truncation"] = e.truncation ? truncation_to_json(*e.truncation) : json(nullptr);
    o["x0"] = e.x0 ? json(std::vector<double>(e.x0->data(), e.x0->data() + e.x0->size())) : json(nullptr);
    o["truncate_output"] = e.truncate_output;
    j["estimators"].push_back(std::move(o));
  }
  return j;
}

}  // namespace kpe::cli
