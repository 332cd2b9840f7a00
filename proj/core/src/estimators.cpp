#include "kpe/estimators.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "kpe/errors.hpp"
#include "kpe/numerics.hpp"

namespace kpe {

namespace {

template <class... Ts>
struct Overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
Overloaded(Ts...) -> Overloaded<Ts...>;

bool structured_possible(const KernelSpec& kernel, const Dataset& data) {
  return kernel.is_markov() && data.binary() && data.states.cols() == 1;
}

Dataset subset(const Dataset& data, const std::vector<Eigen::Index>& idx) {
  Dataset out;
  const auto m = static_cast<Eigen::Index>(idx.size());
  out.states.resize(m, data.states.cols());
  out.outcomes.resize(m);
  if (data.binary()) {
    out.labels.resize(m);
    out.actions.resize(m, 0);
  } else {
    out.actions.resize(m, data.actions.cols());
  }
  for (Eigen::Index k = 0; k < m; ++k) {
    out.states.row(k) = data.states.row(idx[k]);
    out.outcomes[k] = data.outcomes[idx[k]];
    if (data.binary()) {
      out.labels[k] = data.labels[idx[k]];
    } else {
      out.actions.row(k) = data.actions.row(idx[k]);
    }
  }
  out.seed = data.seed;
  out.instance_tag = data.instance_tag;
  return out;
}

// Points and signed masses of omega at each state row.
void atoms_for_states(const Eigen::MatrixXd& states, const WeightFunctional& omega, std::vector<Point>& points,
                      std::vector<double>& masses) {
  for (Eigen::Index i = 0; i < states.rows(); ++i) {
    const Eigen::VectorXd s = states.row(i).transpose();
    for (auto& [a, w] : omega.atoms(s)) {
      if (w == 0.0) continue;
      points.push_back(Point{s, std::move(a)});
      masses.push_back(w);
    }
  }
}

}  // namespace

// ---------------------------------------------------------------------------------------------
// Kernel ridge regression

KrrModel krr_fit_targets(const Dataset& data, const Eigen::VectorXd& targets, const KernelSpec& kernel, double ridge,
                         const std::optional<Eigen::VectorXd>& weights, SolvePath path) {
  if (data.size() < 1) throw InputError("cannot fit on an empty slice");
  if (targets.size() != data.size()) throw InputError("targets length does not match the slice");
  if (!(ridge > 0.0) || !std::isfinite(ridge)) throw InputError("ridge must be positive and finite");
  const bool possible = structured_possible(kernel, data);
  if (path == SolvePath::kStructured && !possible) {
    throw InputError("structured solver needs a scalar-state Markov kernel with discrete actions");
  }
  const bool structured = path == SolvePath::kStructured || (path == SolvePath::kAuto && possible);

  KrrModel model(kernel);
  model.training_points = data.points();
  model.ridge = ridge;
  model.weights = weights;
  if (structured) {
    model.scalar_states_ = data.scalar_states();
    model.scalar_labels_ = data.labels;
    model.structured_ = true;
    model.dual_coefficients = markov_regularized_solve(kernel, {model.scalar_states_, model.scalar_labels_},
                                                       targets, ridge, weights);
  } else {
    const GramMatrix gram = gram_matrix(kernel, model.training_points);
    model.dual_coefficients = regularized_solve(gram, targets, ridge, weights);
  }
  return model;
}

KrrModel krr_fit(const Dataset& data, const KernelSpec& kernel, double ridge,
                 const std::optional<Eigen::VectorXd>& weights, SolvePath path) {
  return krr_fit_targets(data, data.outcomes, kernel, ridge, weights, path);
}

Eigen::VectorXd KrrModel::predict(const std::vector<Point>& queries) const {
  if (queries.empty()) return Eigen::VectorXd(0);
  if (structured_) {
    const bool scalar = std::all_of(queries.begin(), queries.end(), [](const Point& q) {
      return q.has_discrete_action() && q.state.size() == 1;
    });
    if (scalar) {
      std::vector<double> states(queries.size());
      std::vector<int> labels(queries.size());
      for (size_t i = 0; i < queries.size(); ++i) {
        states[i] = queries[i].state[0];
        labels[i] = queries[i].label();
      }
      return markov_predict(kernel, {scalar_states_, scalar_labels_}, dual_coefficients, {states, labels});
    }
  }
  return cross_kernel(kernel, queries, training_points) * dual_coefficients;
}

double KrrModel::predict(const Point& u) const { return predict(std::vector<Point>{u})[0]; }

double functional_average(const KrrModel& model, const Eigen::MatrixXd& states, const WeightFunctional& omega) {
  if (states.rows() < 1) throw InputError("functional average needs at least one state");
  std::vector<Point> points;
  std::vector<double> masses;
  atoms_for_states(states, omega, points, masses);
  const Eigen::VectorXd pred = model.predict(points);
  double acc = 0.0;
  for (size_t k = 0; k < masses.size(); ++k) acc += masses[k] * pred[static_cast<Eigen::Index>(k)];
  return acc / static_cast<double>(states.rows());
}

// ---------------------------------------------------------------------------------------------
// Regularization

std::vector<double> default_cv_grid(Eigen::Index n) {
  std::vector<double> grid(20);
  const double lo = std::log(1e-4 / n), hi = std::log(1e2 / n);
  for (int k = 0; k < 20; ++k) grid[k] = std::exp(lo + (hi - lo) * k / 19.0);
  return grid;
}

double resolve_ridge(const RegularizationPolicy& policy, const Dataset& data, const KernelSpec& kernel) {
  const double n = static_cast<double>(data.size());
  if (n < 1) throw InputError("ridge policy needs a nonempty slice");
  const double rho = std::visit(
      Overloaded{
          [&](const OptEmpiricalRidge& p) { return p.scale / n; },
          [&](const TheoryRidge& p) { return p.sigma_bar * p.sigma_bar / (p.radius * p.radius * n); },
          [&](const WeakAssumptionRidge& p) {
            return std::max(p.sigma_bar * p.sigma_bar / (p.radius * p.radius * n),
                            32.0 * p.kappa * p.kappa * std::log(n / p.delta) / n);
          },
          [&](const CrossValidatedRidge& p) {
            return cv_select_ridge(data, kernel, p.grid.empty() ? default_cv_grid(data.size()) : p.grid, p.folds,
                                   p.seed);
          },
          [&](const FixedRidge& p) { return p.ridge; },
      },
      policy);
  if (!(rho > 0.0) || !std::isfinite(rho)) throw InputError("regularization policy produced a non-positive ridge");
  return rho;
}

double cv_select_ridge(const Dataset& data, const KernelSpec& kernel, const std::vector<double>& grid, int folds,
                       std::uint64_t seed) {
  if (grid.empty()) throw InputError("ridge grid must be nonempty");
  if (folds < 2) throw InputError("cross-validation needs at least 2 folds");
  const Eigen::Index n = data.size();
  if (n < folds) throw InputError("fewer observations than folds");
  if (grid.size() == 1) return grid[0];

  std::vector<Eigen::Index> perm(n);
  std::iota(perm.begin(), perm.end(), Eigen::Index{0});
  Rng rng(seed);
  for (Eigen::Index i = n - 1; i > 0; --i) {
    const auto j = static_cast<Eigen::Index>(rng.uniform() * static_cast<double>(i + 1));
    std::swap(perm[i], perm[std::min(j, i)]);
  }

  std::vector<double> sse(grid.size(), 0.0);
  for (int f = 0; f < folds; ++f) {
    const Eigen::Index begin = f * n / folds, end = (f + 1) * n / folds;
    std::vector<Eigen::Index> train, test;
    for (Eigen::Index k = 0; k < n; ++k) (k >= begin && k < end ? test : train).push_back(perm[k]);
    std::sort(train.begin(), train.end());
    std::sort(test.begin(), test.end());
    const Dataset tr = subset(data, train), te = subset(data, test);
    const std::vector<Point> queries = te.points();
    for (size_t g = 0; g < grid.size(); ++g) {
      const KrrModel model = krr_fit(tr, kernel, grid[g]);
      sse[g] += (model.predict(queries) - te.outcomes).squaredNorm();
    }
  }
  size_t best = 0;
  for (size_t g = 1; g < grid.size(); ++g) {
    if (sse[g] < sse[best] || (sse[g] == sse[best] && grid[g] > grid[best])) best = g;
  }
  return grid[best];
}

// ---------------------------------------------------------------------------------------------
// Two-stage

double two_stage_on(const Dataset& fit, const Dataset& evaluate, const KernelSpec& kernel,
                    const RegularizationPolicy& policy, const WeightFunctional& omega) {
  if (fit.size() < 1 || evaluate.size() < 1) throw InputError("degenerate split");
  const double rho = resolve_ridge(policy, fit, kernel);
  return functional_average(krr_fit(fit, kernel, rho), evaluate.states, omega);
}

double two_stage_estimate(const Dataset& data, const KernelSpec& kernel, const RegularizationPolicy& policy,
                          const WeightFunctional& omega) {
  if (data.size() < 4) throw InputError("two-stage estimate needs at least 4 observations");
  const Eigen::Index half = data.size() / 2;
  return two_stage_on(data.slice(0, half), data.slice(half, data.size()), kernel, policy, omega);
}

double crossfit_two_stage(const Dataset& data, const KernelSpec& kernel, const RegularizationPolicy& policy,
                          const WeightFunctional& omega) {
  if (data.size() < 4) throw InputError("cross-fit estimate needs at least 4 observations");
  const Eigen::Index half = data.size() / 2;
  const Dataset first = data.slice(0, half), second = data.slice(half, data.size());
  const double a = two_stage_on(first, second, kernel, policy, omega);
  const double b = two_stage_on(second, first, kernel, policy, omega);
  return 0.5 * (a + b);
}

// ---------------------------------------------------------------------------------------------
// Conditional variance

FittedCondVar::FittedCondVar(const CondVarEstimator& estimator, const Dataset& data,
                             const Eigen::VectorXd& squared_residuals, ClampInterval clamp)
    : clamp_(clamp), data_(data), z_(squared_residuals) {
  if (data.size() < 1) throw InputError("conditional variance needs a nonempty slice");
  if (squared_residuals.size() != data.size()) throw InputError("residual length does not match the slice");
  if (!(clamp.low > 0.0 && clamp.low <= clamp.high)) throw InputError("clamp interval must satisfy 0 < low <= high");
  if (const auto* krr = std::get_if<KrrSquaredResiduals>(&estimator.method)) {
    local_ = false;
    model_ = krr_fit_targets(data, squared_residuals, krr->kernel, resolve_ridge(krr->policy, data, krr->kernel));
    return;
  }
  const auto& la = std::get<LocalAverage>(estimator.method);
  const double n = static_cast<double>(data.size());
  const double exponent = 1.0 / (la.intrinsic_dim + 2.0);
  if (la.radius) {
    radius_ = *la.radius;
  } else if (la.use_confidence_radius) {
    radius_ = std::pow(std::log(1.0 / la.delta) / (la.lipschitz * la.lipschitz * la.density_floor * n), exponent);
  } else {
    radius_ = std::pow(n, -exponent);
  }
  if (!(radius_ > 0.0)) throw InputError("local-average radius must be positive");
  if (data.binary() && data.states.cols() == 1) {
    std::vector<int> labels = data.labels;
    std::sort(labels.begin(), labels.end());
    labels.erase(std::unique(labels.begin(), labels.end()), labels.end());
    for (int label : labels) {
      std::vector<std::pair<double, double>> rows;
      for (Eigen::Index i = 0; i < data.size(); ++i) {
        if (data.labels[i] == label) rows.emplace_back(data.states(i, 0), squared_residuals[i]);
      }
      std::sort(rows.begin(), rows.end());
      Sorted s;
      s.prefix.push_back(0.0);
      for (const auto& [x, z] : rows) {
        s.states.push_back(x);
        s.prefix.push_back(s.prefix.back() + z);
      }
      by_label_.emplace_back(label, std::move(s));
    }
  }
}

CondVarValue FittedCondVar::evaluate(const Point& query) const {
  if (!local_) return {clamp_.apply(model_->predict(query)), false};
  const double midpoint = 0.5 * (clamp_.low + clamp_.high);
  if (!by_label_.empty() && query.has_discrete_action() && query.state.size() == 1) {
    for (const auto& [label, s] : by_label_) {
      if (label != query.label()) continue;
      const double x = query.state[0];
      const auto lo = std::lower_bound(s.states.begin(), s.states.end(), x - radius_) - s.states.begin();
      const auto hi = std::upper_bound(s.states.begin(), s.states.end(), x + radius_) - s.states.begin();
      if (hi == lo) return {midpoint, true};
      return {clamp_.apply((s.prefix[hi] - s.prefix[lo]) / static_cast<double>(hi - lo)), false};
    }
    return {midpoint, true};
  }
  // General case: sup-norm ball in state, exact match or sup-norm ball in action.
  double sum = 0.0;
  Eigen::Index count = 0;
  for (Eigen::Index i = 0; i < data_.size(); ++i) {
    const Point u = data_.point(i);
    if ((u.state - query.state).cwiseAbs().maxCoeff() > radius_) continue;
    if (query.has_discrete_action() != u.has_discrete_action()) continue;
    if (query.has_discrete_action()) {
      if (query.label() != u.label()) continue;
    } else if ((u.action_vector() - query.action_vector()).cwiseAbs().maxCoeff() > radius_) {
      continue;
    }
    sum += z_[i];
    ++count;
  }
  if (count == 0) return {midpoint, true};
  return {clamp_.apply(sum / static_cast<double>(count)), false};
}

Eigen::VectorXd FittedCondVar::evaluate(const std::vector<Point>& queries) const {
  Eigen::VectorXd out(static_cast<Eigen::Index>(queries.size()));
  if (!local_) {
    const Eigen::VectorXd raw = model_->predict(queries);
    for (Eigen::Index i = 0; i < out.size(); ++i) out[i] = clamp_.apply(raw[i]);
    return out;
  }
  for (size_t i = 0; i < queries.size(); ++i) out[static_cast<Eigen::Index>(i)] = evaluate(queries[i]).value;
  return out;
}

CondVarValue estimate_cond_var(const CondVarEstimator& estimator, const Dataset& data,
                               const Eigen::VectorXd& squared_residuals, const Point& query, double sigma_bar) {
  const ClampInterval clamp =
      estimator.clamp.value_or(ClampInterval{0.25 * sigma_bar * sigma_bar, 4.0 * sigma_bar * sigma_bar});
  return FittedCondVar(estimator, data, squared_residuals, clamp).evaluate(query);
}

// ---------------------------------------------------------------------------------------------
// Multi-stage pipelines

namespace {

// Stages I-III on (pilot, variance, weighted) folds; returns the weighted fit.
KrrModel weighted_regression(const Dataset& pilot_fold, const Dataset& variance_fold, const Dataset& weighted_fold,
                             const KernelSpec& kernel, const CondVarEstimator& condvar, const FourStageParams& params) {
  if (!(params.sigma_bar > 0.0) || !(params.radius > 0.0)) throw InputError("sigma_bar and R must be positive");
  const double r2 = params.radius * params.radius;
  const double s2 = params.sigma_bar * params.sigma_bar;

  const double rho_pilot = s2 / (r2 * static_cast<double>(pilot_fold.size()));
  const KrrModel pilot = krr_fit(pilot_fold, kernel, rho_pilot);

  const Eigen::VectorXd residual = variance_fold.outcomes - pilot.predict(variance_fold.points());
  const Eigen::VectorXd z = residual.array().square();
  const ClampInterval clamp = condvar.clamp.value_or(ClampInterval{0.25 * s2, 4.0 * s2});
  const FittedCondVar variance(condvar, variance_fold, z, clamp);

  const Eigen::VectorXd weights = variance.evaluate(weighted_fold.points()).cwiseInverse();
  const double rho_weighted = 1.0 / (r2 * static_cast<double>(weighted_fold.size()));
  return krr_fit(weighted_fold, kernel, rho_weighted, weights);
}

}  // namespace

double four_stage_estimate(const Dataset& data, const KernelSpec& kernel, const CondVarEstimator& condvar,
                           const FourStageParams& params, const WeightFunctional& omega) {
  if (data.size() < 8) throw InputError("four-stage estimate needs at least 8 observations");
  const Eigen::Index q = data.size() / 4;
  const KrrModel model = weighted_regression(data.slice(0, q), data.slice(q, 2 * q), data.slice(2 * q, 3 * q), kernel,
                                             condvar, params);
  return functional_average(model, data.slice(3 * q, data.size()).states, omega);
}

double one_point_estimate(const Dataset& data, const KernelSpec& kernel, const CondVarEstimator& condvar,
                          const FourStageParams& params, const WeightFunctional& omega, const Eigen::VectorXd& x0) {
  if (data.size() < 6) throw InputError("one-point estimate needs at least 6 observations");
  if (x0.size() != data.states.cols()) throw InputError("x0 has the wrong dimension");
  const Eigen::Index q = data.size() / 3;
  const KrrModel model = weighted_regression(data.slice(0, q), data.slice(q, 2 * q), data.slice(2 * q, data.size()),
                                             kernel, condvar, params);
  Eigen::MatrixXd states(1, x0.size());
  states.row(0) = x0.transpose();
  return functional_average(model, states, omega);
}

// ---------------------------------------------------------------------------------------------
// Inverse propensity weighting

double truncated_ipw_estimate(const Dataset& data, const Propensity& propensity, double level) {
  if (!data.binary() || data.states.cols() != 1) throw InputError("IPW expects scalar states and binary actions");
  if (data.size() < 1) throw InputError("IPW needs at least one observation");
  double acc = 0.0;
  for (Eigen::Index i = 0; i < data.size(); ++i) {
    const double p = propensity(data.states(i, 0));
    if (p < level) continue;
    if (data.labels[i] != 1) continue;
    if (!(p > 0.0)) throw DataError("propensity is zero at a treated observation");
    acc += data.outcomes[i] / p;
  }
  return acc / static_cast<double>(data.size());
}

double ipw_estimate(const Dataset& data, const Propensity& propensity) {
  return truncated_ipw_estimate(data, propensity, -std::numeric_limits<double>::infinity());
}

double truncation_level(const TruncationRule& rule, const Propensity& propensity, Eigen::Index n) {
  const double ln = std::log(static_cast<double>(n));
  switch (rule.kind) {
    case TruncationRule::Kind::kNone: return 0.0;
    case TruncationRule::Kind::kFixed: return rule.value;
    case TruncationRule::Kind::kLogQuantile: return propensity(ln);
    case TruncationRule::Kind::kRootLogQuantile: return propensity(std::sqrt(ln));
    case TruncationRule::Kind::kInverseRootN: return 1.0 / std::sqrt(static_cast<double>(n));
  }
  return 0.0;
}

TruncationRule default_truncation_rule(const ProblemInstance& instance) {
  switch (instance.propensity.kind) {
    case Propensity::Kind::kLogisticCdf: return {TruncationRule::Kind::kLogQuantile, 0.0};
    case Propensity::Kind::kNormalSurvival: return {TruncationRule::Kind::kRootLogQuantile, 0.0};
    default: return {TruncationRule::Kind::kInverseRootN, 0.0};
  }
}

double truncate_estimate(double tau, double radius, double kappa) {
  if (!(radius > 0.0) || !(kappa > 0.0)) throw InputError("radius and kappa must be positive");
  const double cap = radius * std::sqrt(kappa);
  return std::copysign(std::min(std::abs(tau), cap), tau);
}

}  // namespace kpe
