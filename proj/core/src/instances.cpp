#include "kpe/instances.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <sstream>

#include "kpe/errors.hpp"

namespace kpe {

namespace {

template <class... Ts>
struct Overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
Overloaded(Ts...) -> Overloaded<Ts...>;

constexpr double kPi = std::numbers::pi;

bool treated(const Point& u) { return u.has_discrete_action() && u.label() == 1; }

}  // namespace

// ---------------------------------------------------------------------------------------------
// State laws

std::string to_string(StateLaw law) {
  switch (law) {
    case StateLaw::kUniform01: return "uniform01";
    case StateLaw::kStdNormal: return "std_normal";
    case StateLaw::kStdLogistic: return "std_logistic";
    case StateLaw::kStdCauchy: return "std_cauchy";
  }
  return "unknown";
}

StateLaw state_law_from_string(const std::string& name) {
  if (name == "uniform01") return StateLaw::kUniform01;
  if (name == "std_normal" || name == "N") return StateLaw::kStdNormal;
  if (name == "std_logistic" || name == "L") return StateLaw::kStdLogistic;
  if (name == "std_cauchy" || name == "C") return StateLaw::kStdCauchy;
  throw InputError("unknown state law '" + name + "'");
}

double state_quantile(StateLaw law, double p) {
  if (!(p > 0.0 && p < 1.0)) throw InputError("quantile level must lie in (0, 1)");
  switch (law) {
    case StateLaw::kUniform01: return p;
    case StateLaw::kStdNormal: return normal_quantile(p);
    case StateLaw::kStdLogistic: return std::log(p) - std::log1p(-p);
    case StateLaw::kStdCauchy: return std::tan(kPi * (p - 0.5));
  }
  return 0.0;
}

double state_density(StateLaw law, double x) {
  switch (law) {
    case StateLaw::kUniform01: return (x >= 0.0 && x <= 1.0) ? 1.0 : 0.0;
    case StateLaw::kStdNormal: return normal_density(x);
    case StateLaw::kStdLogistic: {
      const double e = std::exp(-std::abs(x));
      return e / ((1.0 + e) * (1.0 + e));
    }
    case StateLaw::kStdCauchy: return 1.0 / (kPi * (1.0 + x * x));
  }
  return 0.0;
}

double state_cdf(StateLaw law, double x) {
  switch (law) {
    case StateLaw::kUniform01: return std::clamp(x, 0.0, 1.0);
    case StateLaw::kStdNormal: return normal_cdf(x);
    case StateLaw::kStdLogistic: return x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
    case StateLaw::kStdCauchy: return 0.5 + std::atan(x) / kPi;
  }
  return 0.0;
}

bool has_interval_support(StateLaw law) { return law == StateLaw::kUniform01; }

// ---------------------------------------------------------------------------------------------
// Propensity

double Propensity::operator()(double s) const {
  switch (kind) {
    case Kind::kSingular:
      if (s < 0.0 || s > 1.0) throw InputError("singular propensity is defined on [0, 1]");
      return std::pow(1.0 - s, parameter);
    case Kind::kLogisticCdf:
      return s > 0 ? std::exp(-s) / (1.0 + std::exp(-s)) : 1.0 / (1.0 + std::exp(s));
    case Kind::kNormalSurvival: return kpe::normal_survival(s);
    case Kind::kConstant: return parameter;
  }
  return 0.0;
}

std::string Propensity::describe() const {
  std::ostringstream os;
  switch (kind) {
    case Kind::kSingular: os << "singular(alpha=" << parameter << ")"; break;
    case Kind::kLogisticCdf: os << "logistic_cdf"; break;
    case Kind::kNormalSurvival: os << "normal_survival"; break;
    case Kind::kConstant: os << "constant(" << parameter << ")"; break;
  }
  return os.str();
}

// ---------------------------------------------------------------------------------------------
// Regression functions

Regression Regression::constant(double c) {
  return {"constant", {c}, [c](const Point&) { return c; }};
}

Regression Regression::one_plus_cos() {
  return {"one_plus_cos", {}, [](const Point& u) { return treated(u) ? 1.0 + std::cos(u.state[0]) : 0.0; }};
}

Regression Regression::smooth_ramp(double c) {
  return {"smooth_ramp", {c}, [c](const Point& u) {
            const double s = u.state[0];
            return treated(u) ? c * (s - 0.5 * s * s) : 0.0;
          }};
}

Regression Regression::cosine_wave(double amplitude) {
  return {"cosine_wave", {amplitude}, [amplitude](const Point& u) {
            if (u.has_discrete_action()) throw InputError("cosine_wave expects continuous actions");
            const double phase = u.state.sum() - u.action_vector().sum();
            return 1.0 + amplitude * std::cos(2.0 * kPi * phase);
          }};
}

Regression Regression::from_name(const std::string& name, const std::vector<double>& params) {
  auto arg = [&](size_t i, double fallback) { return i < params.size() ? params[i] : fallback; };
  if (name == "constant") return constant(arg(0, 0.0));
  if (name == "one_plus_cos") return one_plus_cos();
  if (name == "smooth_ramp") return params.empty() ? smooth_ramp() : smooth_ramp(params[0]);
  if (name == "cosine_wave") return cosine_wave(arg(0, 0.5));
  throw InputError("unknown regression function '" + name + "'");
}

double NoiseModel::sigma(StateLaw law, const Point& u) const {
  if (kind == Kind::kConstant) return low;
  return low + (high - low) * state_cdf(law, u.state[0]);
}

// ---------------------------------------------------------------------------------------------
// Policies and weight functionals

PolicyMap PolicyMap::identity() {
  return {"identity", {}, [](const Eigen::VectorXd& s) { return Action{Eigen::VectorXd(s)}; }};
}

PolicyMap PolicyMap::constant(double c, int action_dim) {
  return {"constant", {c}, [c, action_dim](const Eigen::VectorXd&) {
            return Action{Eigen::VectorXd::Constant(action_dim, c).eval()};
          }};
}

PolicyMap PolicyMap::shift(double c) {
  return {"shift", {c}, [c](const Eigen::VectorXd& s) {
            Eigen::VectorXd a(s.size());
            for (Eigen::Index i = 0; i < s.size(); ++i) {
              double v = s[i] + c;
              v -= std::floor(v);
              a[i] = v >= 1.0 ? 0.0 : v;
            }
            return Action{std::move(a)};
          }};
}

PolicyMap PolicyMap::threshold(double c) {
  return {"threshold", {c}, [c](const Eigen::VectorXd& s) { return Action{DiscreteAction{s[0] >= c ? 1 : 0}}; }};
}

PolicyMap PolicyMap::from_name(const std::string& name, const std::vector<double>& params, int action_dim) {
  auto arg = [&](size_t i, double fallback) { return i < params.size() ? params[i] : fallback; };
  if (name == "identity") return identity();
  if (name == "constant") return constant(arg(0, 0.5), action_dim);
  if (name == "shift") return shift(arg(0, 0.0));
  if (name == "threshold") return threshold(arg(0, 0.5));
  throw InputError("unknown policy map '" + name + "'");
}

WeightFunctional::WeightFunctional(Variant v) : v_(std::move(v)) {
  if (const auto* sp = std::get_if<StochasticPolicyWeight>(&v_)) {
    double total = 0.0;
    for (double p : sp->probabilities) {
      if (!(p >= 0.0)) throw InputError("policy probabilities must be nonnegative");
      total += p;
    }
    if (sp->probabilities.empty() || total > 1.0 + 1e-12) {
      throw InputError("policy probabilities must be nonempty with total mass at most 1");
    }
  }
}

std::vector<std::pair<Action, double>> WeightFunctional::atoms(const Eigen::VectorXd& state) const {
  return std::visit(Overloaded{
                        [](const MissingDataWeight&) {
                          return std::vector<std::pair<Action, double>>{{DiscreteAction{1}, 1.0}};
                        },
                        [](const TreatmentEffectWeight&) {
                          return std::vector<std::pair<Action, double>>{{DiscreteAction{1}, 0.5},
                                                                        {DiscreteAction{0}, -0.5}};
                        },
                        [](const StochasticPolicyWeight& w) {
                          std::vector<std::pair<Action, double>> out;
                          for (size_t k = 0; k < w.probabilities.size(); ++k) {
                            out.emplace_back(DiscreteAction{static_cast<int>(k)}, w.probabilities[k]);
                          }
                          return out;
                        },
                        [&](const DeterministicPolicyWeight& w) {
                          return std::vector<std::pair<Action, double>>{{w.policy(state), 1.0}};
                        },
                    },
                    v_);
}

double WeightFunctional::total_variation(const Eigen::VectorXd& state) const {
  double tv = 0.0;
  for (const auto& [a, w] : atoms(state)) tv += std::abs(w);
  return tv;
}

std::string WeightFunctional::describe() const {
  return std::visit(Overloaded{
                        [](const MissingDataWeight&) { return std::string("missing_data"); },
                        [](const TreatmentEffectWeight&) { return std::string("treatment_effect"); },
                        [](const StochasticPolicyWeight&) { return std::string("stochastic_policy"); },
                        [](const DeterministicPolicyWeight& w) { return "deterministic_policy(" + w.policy.name + ")"; },
                    },
                    v_);
}

// ---------------------------------------------------------------------------------------------
// Builders

std::string ProblemInstance::tag() const {
  return family + params.dump();
}

ProblemInstance singular_missing_data(double alpha, std::optional<Regression> mu) {
  if (!(alpha >= 0.0) || !std::isfinite(alpha)) throw InputError("alpha must be a finite value >= 0");
  ProblemInstance inst;
  inst.family = "singular_missing_data";
  inst.state_law = StateLaw::kUniform01;
  inst.propensity = Propensity::singular(alpha);
  inst.regression = mu ? std::move(*mu) : Regression::one_plus_cos();
  inst.noise = NoiseModel::constant(1.0);
  inst.omega = WeightFunctional::missing_data();
  inst.params = {{"alpha", alpha}};
  return inst;
}

ProblemInstance heavy_tail_study(StateLaw law, Propensity::Kind propensity) {
  if (law == StateLaw::kUniform01) throw InputError("heavy-tail study uses the normal, logistic or Cauchy law");
  if (propensity != Propensity::Kind::kLogisticCdf && propensity != Propensity::Kind::kNormalSurvival) {
    throw InputError("heavy-tail study uses the logistic or normal propensity");
  }
  ProblemInstance inst;
  inst.family = "heavy_tail_study";
  inst.state_law = law;
  inst.propensity = {propensity, 0.0};
  inst.regression = Regression::one_plus_cos();
  inst.noise = NoiseModel::constant(1.0);
  inst.omega = WeightFunctional::missing_data();
  inst.params = {{"state_law", to_string(law)},
                 {"propensity", propensity == Propensity::Kind::kLogisticCdf ? "logistic_cdf" : "normal_survival"}};
  return inst;
}

ProblemInstance continuum_bandit(int state_dim, int action_dim, double smoothness, PolicyMap policy,
                                 std::optional<Regression> mu) {
  if (state_dim < 1 || action_dim < 1) throw InputError("continuum bandit dimensions must be >= 1");
  if (!(smoothness > 0.5 * (state_dim + action_dim))) {
    throw InputError("smoothness must exceed (d_x + d_a) / 2");
  }
  if ((policy.name == "identity" || policy.name == "shift") && state_dim != action_dim) {
    throw InputError("policy '" + policy.name + "' needs d_x == d_a");
  }
  ProblemInstance inst;
  inst.family = "continuum_bandit";
  inst.state_law = StateLaw::kUniform01;
  inst.state_dim = state_dim;
  inst.action_dim = action_dim;
  inst.propensity = Propensity::constant(1.0);
  inst.regression = mu ? std::move(*mu) : Regression::cosine_wave();
  inst.noise = NoiseModel::constant(1.0);
  inst.params = {{"state_dim", state_dim},
                 {"action_dim", action_dim},
                 {"smoothness", smoothness},
                 {"policy", {{"name", policy.name}, {"params", policy.params}}}};
  inst.omega = WeightFunctional::deterministic_policy(std::move(policy));
  return inst;
}

ProblemInstance missing_data_instance(StateLaw law, Propensity propensity, Regression mu, NoiseModel noise) {
  if (propensity.kind == Propensity::Kind::kSingular && law != StateLaw::kUniform01) {
    throw InputError("singular propensity needs the uniform state law");
  }
  if (propensity.kind == Propensity::Kind::kConstant && !(propensity.parameter >= 0.0 && propensity.parameter <= 1.0)) {
    throw InputError("constant propensity must lie in [0, 1]");
  }
  ProblemInstance inst;
  inst.family = "missing_data";
  inst.state_law = law;
  inst.propensity = propensity;
  inst.regression = std::move(mu);
  inst.noise = noise;
  inst.omega = WeightFunctional::missing_data();
  inst.params = {{"state_law", to_string(law)}};
  return inst;
}

// ---------------------------------------------------------------------------------------------
// JSON descriptors

namespace {

nlohmann::json propensity_to_json(const Propensity& p) {
  static const char* names[] = {"singular", "logistic_cdf", "normal_survival", "constant"};
  return {{"kind", names[static_cast<int>(p.kind)]}, {"parameter", p.parameter}};
}

Propensity propensity_from_json(const nlohmann::json& j) {
  const std::string kind = j.is_string() ? j.get<std::string>() : j.at("kind").get<std::string>();
  const double param = j.is_object() ? j.value("parameter", 0.5) : 0.5;
  if (kind == "singular") return Propensity::singular(param);
  if (kind == "logistic_cdf") return Propensity::logistic_cdf();
  if (kind == "normal_survival") return Propensity::normal_survival();
  if (kind == "constant") return Propensity::constant(param);
  throw InputError("unknown propensity '" + kind + "'");
}

nlohmann::json weight_to_json(const WeightFunctional& w) {
  return std::visit(Overloaded{
                        [](const MissingDataWeight&) { return nlohmann::json{{"kind", "missing_data"}}; },
                        [](const TreatmentEffectWeight&) { return nlohmann::json{{"kind", "treatment_effect"}}; },
                        [](const StochasticPolicyWeight& s) {
                          return nlohmann::json{{"kind", "stochastic_policy"}, {"probabilities", s.probabilities}};
                        },
                        [](const DeterministicPolicyWeight& d) {
                          return nlohmann::json{{"kind", "deterministic_policy"},
                                                {"policy", {{"name", d.policy.name}, {"params", d.policy.params}}}};
                        },
                    },
                    w.variant());
}

WeightFunctional weight_from_json(const nlohmann::json& j, int action_dim) {
  const std::string kind = j.at("kind").get<std::string>();
  if (kind == "missing_data") return WeightFunctional::missing_data();
  if (kind == "treatment_effect") return WeightFunctional::treatment_effect();
  if (kind == "stochastic_policy") {
    return WeightFunctional::stochastic_policy(j.at("probabilities").get<std::vector<double>>());
  }
  if (kind == "deterministic_policy") {
    const auto& p = j.at("policy");
    return WeightFunctional::deterministic_policy(PolicyMap::from_name(
        p.at("name").get<std::string>(), p.value("params", std::vector<double>{}), action_dim));
  }
  throw InputError("unknown weight functional '" + kind + "'");
}

nlohmann::json noise_to_json(const NoiseModel& n) {
  if (n.kind == NoiseModel::Kind::kConstant) return {{"kind", "constant"}, {"sigma", n.low}};
  return {{"kind", "state_linear"}, {"low", n.low}, {"high", n.high}};
}

NoiseModel noise_from_json(const nlohmann::json& j) {
  const std::string kind = j.at("kind").get<std::string>();
  if (kind == "constant") {
    const double s = j.at("sigma").get<double>();
    if (!(s >= 0.0)) throw InputError("noise sigma must be >= 0");
    return NoiseModel::constant(s);
  }
  if (kind == "state_linear") {
    const double lo = j.at("low").get<double>(), hi = j.at("high").get<double>();
    if (!(lo >= 0.0 && hi >= 0.0)) throw InputError("noise bounds must be >= 0");
    return NoiseModel::state_linear(lo, hi);
  }
  throw InputError("unknown noise kind '" + kind + "'");
}

}  // namespace

nlohmann::json instance_to_json(const ProblemInstance& inst) {
  nlohmann::json j = inst.params;
  j["family"] = inst.family;
  if (inst.family == "missing_data") {
    j["state_law"] = to_string(inst.state_law);
    j["propensity"] = propensity_to_json(inst.propensity);
  }
  j["regression"] = {{"name", inst.regression.name}, {"params", inst.regression.params}};
  j["noise"] = noise_to_json(inst.noise);
  j["weight"] = weight_to_json(inst.omega);
  j["rkhs_radius"] = inst.rkhs_radius;
  return j;
}

ProblemInstance instance_from_json(const nlohmann::json& j) {
  std::vector<std::string> errors;
  auto guard = [&](const std::string& field, auto&& fn) {
    try {
      fn();
    } catch (const std::exception& e) {
      errors.push_back("instance." + field + ": " + e.what());
    }
  };
  if (!j.is_object()) throw ConfigError({"instance: expected an object"});

  std::optional<Regression> mu;
  if (j.contains("regression")) {
    guard("regression", [&] {
      const auto& r = j.at("regression");
      mu = Regression::from_name(r.at("name").get<std::string>(), r.value("params", std::vector<double>{}));
    });
  }

  ProblemInstance inst;
  const std::string family = j.value("family", std::string());
  bool built = false;
  if (family == "singular_missing_data") {
    guard("alpha", [&] {
      inst = singular_missing_data(j.at("alpha").get<double>(), mu);
      built = true;
    });
  } else if (family == "heavy_tail_study") {
    StateLaw law = StateLaw::kStdNormal;
    Propensity prop;
    bool ok = true;
    guard("state_law", [&] {
      try {
        law = state_law_from_string(j.at("state_law").get<std::string>());
      } catch (...) {
        ok = false;
        throw;
      }
    });
    guard("propensity", [&] {
      try {
        prop = propensity_from_json(j.at("propensity"));
      } catch (...) {
        ok = false;
        throw;
      }
    });
    if (ok) {
      guard("family", [&] {
        inst = heavy_tail_study(law, prop.kind);
        if (mu) inst.regression = *mu;
        built = true;
      });
    }
  } else if (family == "continuum_bandit") {
    guard("continuum_bandit", [&] {
      const int dx = j.at("state_dim").get<int>(), da = j.at("action_dim").get<int>();
      const double s = j.at("smoothness").get<double>();
      PolicyMap policy = PolicyMap::identity();
      if (j.contains("policy")) {
        const auto& p = j.at("policy");
        policy = PolicyMap::from_name(p.at("name").get<std::string>(), p.value("params", std::vector<double>{}), da);
      }
      inst = continuum_bandit(dx, da, s, std::move(policy), mu);
      built = true;
    });
  } else if (family == "missing_data") {
    guard("missing_data", [&] {
      inst = missing_data_instance(state_law_from_string(j.at("state_law").get<std::string>()),
                                   propensity_from_json(j.at("propensity")),
                                   mu ? *mu : Regression::constant(0.0));
      built = true;
    });
  } else {
    errors.push_back("instance.family: unknown family '" + family + "'");
  }

  if (built) {
    if (j.contains("noise")) guard("noise", [&] { inst.noise = noise_from_json(j.at("noise")); });
    if (j.contains("weight")) guard("weight", [&] { inst.omega = weight_from_json(j.at("weight"), inst.action_dim); });
    if (j.contains("rkhs_radius")) {
      guard("rkhs_radius", [&] {
        const double r = j.at("rkhs_radius").get<double>();
        if (!(r > 0.0)) throw InputError("must be positive");
        inst.rkhs_radius = r;
      });
    }
  }
  if (!errors.empty()) throw ConfigError(errors);
  return inst;
}

// ---------------------------------------------------------------------------------------------
// Dataset

Point Dataset::point(Eigen::Index i) const {
  if (binary()) return Point{states.row(i).transpose(), DiscreteAction{labels[i]}};
  return Point::continuous(states.row(i).transpose(), actions.row(i).transpose());
}

std::vector<Point> Dataset::points() const {
  std::vector<Point> out;
  out.reserve(size());
  for (Eigen::Index i = 0; i < size(); ++i) out.push_back(point(i));
  return out;
}

Dataset Dataset::slice(Eigen::Index begin, Eigen::Index end) const {
  if (begin < 0 || end > size() || begin > end) throw InputError("dataset slice out of range");
  Dataset out;
  const Eigen::Index m = end - begin;
  out.states = states.middleRows(begin, m);
  if (binary()) {
    out.labels.assign(labels.begin() + begin, labels.begin() + end);
    out.actions.resize(m, 0);
  } else {
    out.actions = actions.middleRows(begin, m);
  }
  out.outcomes = outcomes.segment(begin, m);
  out.seed = seed;
  out.instance_tag = instance_tag;
  return out;
}

std::vector<double> Dataset::scalar_states() const {
  if (states.cols() != 1) throw InputError("dataset states are not scalar");
  return std::vector<double>(states.data(), states.data() + states.rows());
}

Dataset Dataset::concat(const Dataset& a, const Dataset& b) {
  if (a.states.cols() != b.states.cols() || a.binary() != b.binary() || a.actions.cols() != b.actions.cols()) {
    throw InputError("datasets differ in layout");
  }
  Dataset out;
  out.states.resize(a.size() + b.size(), a.states.cols());
  out.states << a.states, b.states;
  if (a.binary()) {
    out.labels = a.labels;
    out.labels.insert(out.labels.end(), b.labels.begin(), b.labels.end());
    out.actions.resize(a.size() + b.size(), 0);
  } else {
    out.actions.resize(a.size() + b.size(), a.actions.cols());
    out.actions << a.actions, b.actions;
  }
  out.outcomes.resize(a.size() + b.size());
  out.outcomes << a.outcomes, b.outcomes;
  out.seed = a.seed;
  out.instance_tag = a.instance_tag;
  return out;
}

// ---------------------------------------------------------------------------------------------
// Sampling

namespace {

void draw_state(const ProblemInstance& inst, Rng& rng, Eigen::Ref<Eigen::VectorXd> out) {
  for (int k = 0; k < inst.state_dim; ++k) {
    out[k] = inst.state_law == StateLaw::kUniform01 ? rng.uniform() : state_quantile(inst.state_law, rng.uniform_open());
  }
}

}  // namespace

Eigen::MatrixXd sample_states(const ProblemInstance& inst, int m, Rng& rng) {
  Eigen::MatrixXd out(m, inst.state_dim);
  Eigen::VectorXd s(inst.state_dim);
  for (int i = 0; i < m; ++i) {
    draw_state(inst, rng, s);
    out.row(i) = s.transpose();
  }
  return out;
}

std::vector<Point> sample_state_actions(const ProblemInstance& inst, int m, std::uint64_t seed) {
  const Dataset d = sample_dataset(inst, m, seed);
  return d.points();
}

Dataset sample_dataset(const ProblemInstance& inst, Eigen::Index n, std::uint64_t seed) {
  if (n < 1) throw InputError("sample size must be >= 1");
  Rng rng(seed);
  Dataset d;
  d.seed = seed;
  d.instance_tag = inst.tag();
  d.states.resize(n, inst.state_dim);
  d.outcomes.resize(n);
  const bool binary = inst.binary_actions();
  const bool missing = std::holds_alternative<MissingDataWeight>(inst.omega.variant());
  if (binary) {
    d.labels.resize(n);
    d.actions.resize(n, 0);
  } else {
    d.actions.resize(n, inst.action_dim);
  }
  Eigen::VectorXd s(inst.state_dim);
  for (Eigen::Index i = 0; i < n; ++i) {
    draw_state(inst, rng, s);
    d.states.row(i) = s.transpose();
    Point u;
    if (binary) {
      const int a = rng.uniform() < inst.propensity(s[0]) ? 1 : 0;
      d.labels[i] = a;
      u = Point{s, DiscreteAction{a}};
    } else {
      Eigen::VectorXd a(inst.action_dim);
      for (int k = 0; k < inst.action_dim; ++k) a[k] = rng.uniform();
      d.actions.row(i) = a.transpose();
      u = Point::continuous(s, std::move(a));
    }
    const double z = rng.normal();
    double y = inst.regression(u) + inst.noise.sigma(inst.state_law, u) * z;
    if (binary && missing && u.label() == 0) y = 0.0;
    d.outcomes[i] = y;
  }
  return d;
}

// ---------------------------------------------------------------------------------------------
// Expectations and targets

Expectation expect_over_states(const ProblemInstance& inst, const std::function<double(const Eigen::VectorXd&)>& f,
                               const IntegrationSpec& spec) {
  using M = IntegrationSpec::Method;
  M method = spec.method;
  if (inst.state_dim > 1) method = M::kMonteCarlo;
  if (method == M::kAuto) method = has_interval_support(inst.state_law) ? M::kGaussLegendre : M::kAdaptive;

  Eigen::VectorXd x(1);
  auto scalar = [&](double s) {
    x[0] = s;
    return f(x);
  };
  const StateLaw law = inst.state_law;
  switch (method) {
    case M::kGaussLegendre:
      if (has_interval_support(law)) return {integrate_gl(scalar, 0.0, 1.0, spec.nodes), 0.0};
      return {integrate_gl([&](double p) { return scalar(state_quantile(law, p)); }, 0.0, 1.0, spec.nodes), 0.0};
    case M::kAdaptive:
      if (has_interval_support(law)) return {integrate_adaptive(scalar, 0.0, 1.0), 0.0};
      return {integrate_adaptive(
                  [&](double s) {
                    const double p = state_density(law, s);
                    return p == 0.0 ? 0.0 : scalar(s) * p;
                  },
                  -std::numeric_limits<double>::infinity(), std::numeric_limits<double>::infinity()),
              0.0};
    default: break;
  }
  Rng rng(spec.seed);
  Eigen::VectorXd s(inst.state_dim);
  double mean = 0.0, m2 = 0.0;
  for (int i = 0; i < spec.draws; ++i) {
    draw_state(inst, rng, s);
    const double v = f(s);
    const double delta = v - mean;
    mean += delta / (i + 1);
    m2 += delta * (v - mean);
  }
  const double var = spec.draws > 1 ? m2 / (spec.draws - 1) : 0.0;
  return {mean, std::sqrt(var / spec.draws)};
}

double weighted_outcome(const ProblemInstance& inst, const std::function<double(const Point&)>& mu,
                        const Eigen::VectorXd& state) {
  double acc = 0.0;
  for (const auto& [a, w] : inst.omega.atoms(state)) {
    if (w != 0.0) acc += w * mu(Point{state, a});
  }
  return acc;
}

std::optional<double> analytic_functional(const ProblemInstance& inst) {
  const auto& mu = inst.regression;
  const auto& w = inst.omega.variant();
  const bool missing = std::holds_alternative<MissingDataWeight>(w);
  if (mu.name == "constant") {
    const double c = mu.params.empty() ? 0.0 : mu.params[0];
    if (std::holds_alternative<TreatmentEffectWeight>(w)) return 0.0;
    if (const auto* sp = std::get_if<StochasticPolicyWeight>(&w)) {
      return c * std::accumulate(sp->probabilities.begin(), sp->probabilities.end(), 0.0);
    }
    return c;
  }
  if (mu.name == "one_plus_cos" && missing && inst.state_dim == 1) {
    switch (inst.state_law) {
      case StateLaw::kStdNormal: return 1.0 + std::exp(-0.5);
      case StateLaw::kStdCauchy: return 1.0 + std::exp(-1.0);
      case StateLaw::kStdLogistic: return 1.0 + kPi / std::sinh(kPi);
      case StateLaw::kUniform01: return 1.0 + std::sin(1.0);
    }
  }
  if (mu.name == "smooth_ramp" && missing && inst.state_law == StateLaw::kUniform01 && inst.state_dim == 1) {
    const double c = mu.params.empty() ? 0.8660254037844386 : mu.params[0];
    return c / 3.0;
  }
  if (mu.name == "cosine_wave") {
    if (const auto* dp = std::get_if<DeterministicPolicyWeight>(&w)) {
      const double amp = mu.params.empty() ? 0.5 : mu.params[0];
      if (dp->policy.name == "identity") return 1.0 + amp;
      if (dp->policy.name == "shift") {
        const double c = dp->policy.params.empty() ? 0.0 : dp->policy.params[0];
        return 1.0 + amp * std::cos(2.0 * kPi * inst.state_dim * c);
      }
      if (dp->policy.name == "constant") return 1.0;
    }
  }
  return std::nullopt;
}

double true_functional(const ProblemInstance& inst, TrueValueMethod method) {
  using K = TrueValueMethod::Kind;
  if (method.kind == K::kAnalytic) {
    if (auto v = analytic_functional(inst)) return *v;
    throw InputError("no closed form registered for this instance; use the quadrature method");
  }
  const auto g = [&](const Eigen::VectorXd& s) { return weighted_outcome(inst, inst.regression.eval, s); };
  IntegrationSpec spec;
  if (method.kind == K::kMonteCarlo) {
    spec.method = IntegrationSpec::Method::kMonteCarlo;
    spec.draws = method.draws;
    spec.seed = method.seed;
  }
  return expect_over_states(inst, g, spec).value;
}

double true_one_point(const ProblemInstance& inst, const Eigen::VectorXd& x0) {
  if (x0.size() != inst.state_dim) throw InputError("x0 has the wrong dimension");
  if (has_interval_support(inst.state_law) && ((x0.array() < 0.0).any() || (x0.array() > 1.0).any())) {
    throw InputError("x0 lies outside the state support");
  }
  return weighted_outcome(inst, inst.regression.eval, x0);
}

}  // namespace kpe
