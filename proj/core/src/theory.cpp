#include "kpe/theory.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numbers>
#include <unordered_map>

#include "kpe/errors.hpp"
#include "kpe/numerics.hpp"

namespace kpe {

namespace {

constexpr double kPi = std::numbers::pi;

std::string point_key(const Point& u) {
  std::string key(reinterpret_cast<const char*>(u.state.data()), sizeof(double) * u.state.size());
  if (u.has_discrete_action()) {
    const int label = u.label();
    key.append(reinterpret_cast<const char*>(&label), sizeof(int));
  } else {
    const auto& a = u.action_vector();
    key.append(reinterpret_cast<const char*>(a.data()), sizeof(double) * a.size());
  }
  return key;
}

}  // namespace

// ---------------------------------------------------------------------------------------------
// EigenSystem

EigenSystem::EigenSystem(Eigen::VectorXd eigenvalues, FeatureFn features, std::string base_measure, Source source)
    : eigenvalues_(std::move(eigenvalues)),
      features_(std::move(features)),
      base_measure_(std::move(base_measure)),
      source_(std::move(source)) {
  if (eigenvalues_.size() == 0) throw InputError("eigensystem needs at least one eigenvalue");
  for (Eigen::Index j = 0; j < eigenvalues_.size(); ++j) {
    if (!(eigenvalues_[j] > 0.0)) throw InputError("eigenvalues must be strictly positive");
    if (j > 0 && eigenvalues_[j] > eigenvalues_[j - 1]) throw InputError("eigenvalues must be nonincreasing");
  }
  if (!features_) throw InputError("eigensystem needs an eigenfunction evaluator");
}

Eigen::VectorXd EigenSystem::features(const Point& u) const {
  Eigen::VectorXd out(truncation());
  features_(u, out);
  return out;
}

double EigenSystem::eval(int j, const Point& u) const {
  if (j < 0 || j >= truncation()) throw InputError("eigenfunction index out of range");
  return features(u)[j];
}

Eigen::MatrixXd EigenSystem::feature_matrix(const std::vector<Point>& points) const {
  Eigen::MatrixXd out(points.size(), truncation());
  Eigen::VectorXd row(truncation());
  for (size_t i = 0; i < points.size(); ++i) {
    features_(points[i], row);
    out.row(i) = row.transpose();
  }
  return out;
}

EigenSystem analytic_eigensystem(const SobolevUniformFamily& family, int truncation) {
  if (truncation < 1) throw InputError("truncation must be >= 1");
  const double p = family.treated_mass;
  if (!(p > 0.0 && p <= 1.0)) throw InputError("treated mass must lie in (0, 1]");
  Eigen::VectorXd lambda(truncation);
  for (int j = 0; j < truncation; ++j) {
    const double f = 2.0 / ((2.0 * j + 1.0) * kPi);
    lambda[j] = p * f * f;
  }
  const double scale = std::sqrt(2.0 / p);
  auto features = [truncation, scale](const Point& u, Eigen::Ref<Eigen::VectorXd> out) {
    if (u.state.size() != 1) throw InputError("min-kernel eigenfunctions expect scalar states");
    if (!u.has_discrete_action() || u.label() == 0) {
      out.setZero();
      return;
    }
    const double s = u.state[0];
    for (int j = 0; j < truncation; ++j) out[j] = scale * std::sin((2.0 * j + 1.0) * kPi * s / 2.0);
  };
  return EigenSystem(std::move(lambda), features, "uniform[0,1] x treated mass " + std::to_string(p),
                     EigenSystem::Analytic{});
}

EigenSystem analytic_eigensystem(const PeriodicSobolevFamily& family, int truncation) {
  auto basis = std::make_shared<const FourierBasis>(family.smoothness, family.state_dim, family.action_dim,
                                                    truncation);
  auto features = [basis](const Point& u, Eigen::Ref<Eigen::VectorXd> out) {
    if (u.has_discrete_action()) throw InputError("periodic eigenfunctions expect continuous actions");
    if (u.state.size() != basis->state_dim() || u.action_vector().size() != basis->action_dim()) {
      throw InputError("point dimension does not match the torus");
    }
    basis->evaluate(u.state, u.action_vector(), out);
  };
  return EigenSystem(basis->eigenvalues(), features, "uniform torus", EigenSystem::Analytic{});
}

EigenSystem nystrom_eigensystem(const KernelSpec& spec, const ProblemInstance& instance, int m, std::uint64_t seed) {
  if (m < 10) throw InputError("Nystrom sample size must be >= 10");
  std::vector<Point> sample = sample_state_actions(instance, m, seed);
  const Eigen::MatrixXd g = gram_matrix(spec, sample).entries() / static_cast<double>(m);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(g);
  if (es.info() != Eigen::Success) throw NumericalError("eigendecomposition failed", 0.0);
  const Eigen::VectorXd& ev = es.eigenvalues();
  const double top = ev[m - 1];
  if (!(top > 0.0)) throw DegeneracyError("kernel vanishes on the construction sample");

  std::vector<int> keep;
  for (int i = m - 1; i >= 0 && ev[i] > 1e-12 * top; --i) keep.push_back(i);
  if (keep.empty()) throw DegeneracyError("no eigenvalue above the retention threshold");

  const int J = static_cast<int>(keep.size());
  const double root_m = std::sqrt(static_cast<double>(m));
  Eigen::VectorXd lambda(J);
  Eigen::MatrixXd on_sample(m, J);  // phi_j(u_i) = sqrt(m) v_ij
  for (int j = 0; j < J; ++j) {
    lambda[j] = ev[keep[j]];
    Eigen::VectorXd v = es.eigenvectors().col(keep[j]);
    double orient = v.sum();
    if (std::abs(orient) < 1e-12) {
      Eigen::Index idx;
      v.cwiseAbs().maxCoeff(&idx);
      orient = v[idx];
    }
    if (orient < 0.0) v = -v;
    on_sample.col(j) = root_m * v;
  }
  // Extension phi_j(u) = (1 / (m lambda_j)) sum_i K(u, u_i) phi_j(u_i).
  Eigen::MatrixXd extension = on_sample;
  for (int j = 0; j < J; ++j) extension.col(j) /= static_cast<double>(m) * lambda[j];

  auto index = std::make_shared<std::unordered_map<std::string, int>>();
  for (int i = 0; i < m; ++i) index->emplace(point_key(sample[i]), i);
  auto shared_sample = std::make_shared<const std::vector<Point>>(sample);
  auto rows = std::make_shared<const Eigen::MatrixXd>(std::move(on_sample));
  auto coef = std::make_shared<const Eigen::MatrixXd>(std::move(extension));

  auto features = [spec, index, shared_sample, rows, coef](const Point& u, Eigen::Ref<Eigen::VectorXd> out) {
    if (auto it = index->find(point_key(u)); it != index->end()) {
      out = rows->row(it->second).transpose();
      return;
    }
    const Eigen::MatrixXd k = cross_kernel(spec, std::span<const Point>(&u, 1), *shared_sample);
    out = (k * *coef).transpose();
  };
  return EigenSystem(std::move(lambda), features, "sample of " + instance.tag(),
                     EigenSystem::Nystrom{m, seed, std::move(sample)});
}

// ---------------------------------------------------------------------------------------------
// Feature means and noise-weighted Gram

namespace {

Eigen::VectorXd weighted_features(const EigenSystem& eig, const WeightFunctional& omega, const Eigen::VectorXd& s) {
  Eigen::VectorXd acc = Eigen::VectorXd::Zero(eig.truncation());
  for (const auto& [a, w] : omega.atoms(s)) {
    if (w != 0.0) acc += w * eig.features(Point{s, a});
  }
  return acc;
}

}  // namespace

FeatureMeanVector feature_mean_vector(const EigenSystem& eig, const ProblemInstance& instance, const Target& target,
                                      const IntegrationSpec& spec) {
  FeatureMeanVector out;
  out.target = target;
  const int J = eig.truncation();
  if (const auto* pt = std::get_if<PointTarget>(&target)) {
    if (pt->x0.size() != instance.state_dim) throw InputError("x0 has the wrong dimension");
    out.entries = weighted_features(eig, instance.omega, pt->x0);
  } else {
    using M = IntegrationSpec::Method;
    const bool interval = has_interval_support(instance.state_law) && instance.state_dim == 1;
    const bool use_gl = instance.state_dim == 1 &&
                        ((spec.method == M::kAuto && interval) || spec.method == M::kGaussLegendre);
    out.entries = Eigen::VectorXd::Zero(J);
    if (use_gl) {
      // One panel per 64 modes so oscillatory high-index eigenfunctions stay resolved.
      const int panels = std::max(1, J / 64);
      Eigen::VectorXd s(1);
      for (int p = 0; p < panels; ++p) {
        const QuadratureRule rule = gauss_legendre(spec.nodes, double(p) / panels, double(p + 1) / panels);
        for (int i = 0; i < spec.nodes; ++i) {
          s[0] = interval ? rule.nodes[i] : state_quantile(instance.state_law, rule.nodes[i]);
          out.entries += rule.weights[i] * weighted_features(eig, instance.omega, s);
        }
      }
    } else {
      Rng rng(spec.seed);
      const Eigen::MatrixXd states = sample_states(instance, spec.draws, rng);
      Eigen::VectorXd sum_sq = Eigen::VectorXd::Zero(J);
      for (int i = 0; i < spec.draws; ++i) {
        const Eigen::VectorXd f = weighted_features(eig, instance.omega, states.row(i).transpose());
        out.entries += f;
        sum_sq += f.cwiseProduct(f);
      }
      const double m = spec.draws;
      out.entries /= m;
      if (spec.draws > 1) {
        const Eigen::VectorXd var =
            ((sum_sq / m - out.entries.cwiseProduct(out.entries)) * (m / (m - 1.0))).cwiseMax(0.0);
        out.max_std_error = std::sqrt(var.maxCoeff() / m);
      }
    }
  }
  if (!out.entries.allFinite()) throw NumericalError("non-finite eigenfunction evaluation", 0.0);
  return out;
}

Eigen::MatrixXd noise_weighted_gram(const EigenSystem& eig, const ProblemInstance& instance, int mc_draws,
                                    std::uint64_t seed) {
  if (mc_draws < 1) throw InputError("mc_draws must be >= 1");
  const std::vector<Point> pts = sample_state_actions(instance, mc_draws, seed);
  Eigen::MatrixXd phi = eig.feature_matrix(pts);
  for (int i = 0; i < mc_draws; ++i) {
    const double sigma = instance.noise.sigma(instance.state_law, pts[i]);
    if (!(sigma * sigma > 0.0)) throw InstanceError("noise variance vanishes on the support");
    phi.row(i) /= sigma;
  }
  Eigen::MatrixXd gamma = phi.transpose() * phi / static_cast<double>(mc_draws);
  return 0.5 * (gamma + gamma.transpose());
}

// ---------------------------------------------------------------------------------------------
// Variance functional

namespace {

void check_quadratic_inputs(const Eigen::VectorXd& u, const Eigen::MatrixXd& gram, const Eigen::VectorXd& lambda,
                            double radius, double n) {
  if (!(radius > 0.0)) throw InputError("radius must be positive");
  if (!(n >= 1.0)) throw InputError("sample size must be >= 1");
  if (gram.rows() != u.size() || gram.cols() != u.size() || lambda.size() != u.size()) {
    throw InputError("dimensions of u, Gamma and eigenvalues disagree");
  }
  if ((lambda.array() <= 0.0).any()) throw InputError("eigenvalues must be positive");
}

}  // namespace

double variance_functional(const Eigen::VectorXd& u, const Eigen::MatrixXd& gram, const Eigen::VectorXd& eigenvalues,
                           double radius, double n) {
  check_quadratic_inputs(u, gram, eigenvalues, radius, n);
  if (u.isZero(0.0)) return 0.0;
  Eigen::MatrixXd system = gram;
  system.diagonal().array() += 1.0 / (radius * radius * n * eigenvalues.array());
  Eigen::LLT<Eigen::MatrixXd> llt(system);
  if (llt.info() != Eigen::Success) {
    const double jitter = 1e-10 * system.trace() / static_cast<double>(system.rows());
    system.diagonal().array() += jitter;
    llt.compute(system);
    if (llt.info() != Eigen::Success) throw NumericalError("variance functional system is singular", jitter);
  }
  return std::max(0.0, u.dot(llt.solve(u)));
}

double variance_functional_lower_witness(const Eigen::VectorXd& u, const Eigen::MatrixXd& gram,
                                         const Eigen::VectorXd& eigenvalues, double radius, double n, int trials,
                                         std::uint64_t seed) {
  check_quadratic_inputs(u, gram, eigenvalues, radius, n);
  if (u.isZero(0.0)) return 0.0;
  const double norm_budget = radius * radius * n;
  const Eigen::ArrayXd inv_lambda = eigenvalues.array().inverse();
  const Eigen::Index J = u.size();

  // Objective of a direction after scaling it to the boundary of the feasible set.
  auto objective = [&](const Eigen::VectorXd& d) {
    const double inner = std::abs(d.dot(u));
    if (inner == 0.0) return 0.0;
    const double rkhs = (d.array().square() * inv_lambda).sum();
    const double noise = d.dot(gram * d);
    double t = std::sqrt(norm_budget / rkhs);
    if (noise > 0.0) t = std::min(t, std::sqrt(0.25 / noise));
    return std::isfinite(t) ? inner * t : 0.0;
  };

  Rng rng(seed);
  Eigen::VectorXd best = u;
  double best_val = objective(u);
  auto consider = [&](const Eigen::VectorXd& d) {
    const double v = objective(d);
    if (v > best_val) {
      best_val = v;
      best = d;
      return true;
    }
    return false;
  };
  // Spectrally tilted starting points lambda^g * u.
  for (double g : {0.25, 0.5, 0.75, 1.0}) consider((eigenvalues.array().pow(g) * u.array()).matrix());

  double step = 0.5;
  Eigen::VectorXd noise(J);
  for (int t = 0; t < trials; ++t) {
    if (t % 10 == 9) {
      const double g = rng.uniform() * 1.5;
      const double c = std::exp(std::log(1e-12) * rng.uniform());
      Eigen::VectorXd d = (eigenvalues.array().pow(g) / (eigenvalues.array().pow(g) + c) * u.array()).matrix();
      consider(d);
      continue;
    }
    for (Eigen::Index j = 0; j < J; ++j) noise[j] = rng.normal();
    const double scale = step * best.norm() / std::sqrt(static_cast<double>(J));
    // Multiplicative moves respect the wide dynamic range of the coordinates.
    Eigen::VectorXd cand = (rng.uniform() < 0.5)
                               ? Eigen::VectorXd(best + scale * noise)
                               : Eigen::VectorXd(best.array() * (step * noise.array()).exp());
    if (consider(cand)) {
      step = std::min(2.0, step * 1.5);
    } else {
      step = std::max(1e-6, step * 0.95);
      if (step <= 1e-6) step = 0.5;
    }
  }
  return best_val;
}

// ---------------------------------------------------------------------------------------------
// Efficiency bound

double v_state(const ProblemInstance& instance, const std::function<double(const Point&)>& mu,
               const IntegrationSpec& spec) {
  const auto g = [&](const Eigen::VectorXd& s) { return weighted_outcome(instance, mu, s); };
  const double mean = expect_over_states(instance, g, spec).value;
  const auto centered = [&](const Eigen::VectorXd& s) {
    const double d = g(s) - mean;
    return d * d;
  };
  return std::max(0.0, expect_over_states(instance, centered, spec).value);
}

EfficiencyBound semiparametric_bound(const ProblemInstance& instance, const IntegrationSpec& spec) {
  if (!instance.binary_actions()) {
    throw StructuralError(
        "importance ratio is undefined for an atomic target against continuous actions; use the variance functional");
  }
  if (instance.state_dim != 1) throw InputError("efficiency bound supports scalar states");

  EfficiencyBound out;
  const StateLaw law = instance.state_law;
  const bool missing = std::holds_alternative<MissingDataWeight>(instance.omega.variant());
  const auto sigma_sq = [&](double s, int a) {
    const double sg = instance.noise.sigma(law, Point::binary(s, a));
    return sg * sg;
  };

  if (missing && instance.propensity.kind == Propensity::Kind::kSingular && law == StateLaw::kUniform01) {
    const double alpha = instance.propensity.parameter;
    if (alpha >= 1.0) {
      out.infinite = true;
    } else {
      // t = (1 - s)^(1 - alpha) removes the endpoint singularity.
      const double k = 1.0 - alpha;
      out.weighting_term = integrate_gl(
          [&](double t) { return sigma_sq(1.0 - std::pow(t, 1.0 / k), 1) / k; }, 0.0, 1.0, spec.nodes);
    }
  } else {
    const auto h = [&](double s) {
      Eigen::VectorXd x(1);
      x[0] = s;
      const double p1 = instance.propensity(s);
      double acc = 0.0;
      for (const auto& [a, w] : instance.omega.atoms(x)) {
        if (w == 0.0) continue;
        const int label = std::get<DiscreteAction>(a).label;
        const double pa = label == 1 ? p1 : (label == 0 ? 1.0 - p1 : 0.0);
        if (pa <= 0.0) return std::numeric_limits<double>::infinity();
        acc += w * w * sigma_sq(s, label) / pa;
      }
      return acc;
    };
    // Integrate on shrinking quantile windows; a ratio >= 1.05 between the last two flags divergence.
    double previous = 0.0, current = 0.0;
    bool finite = true;
    for (int k = 1; k <= 3; ++k) {
      const double eps = std::pow(10.0, -4.0 * k);
      double value;
      try {
        value = integrate_adaptive([&](double p) { return h(state_quantile(law, p)); }, eps, 1.0 - eps, 1e-10);
      } catch (const std::exception&) {
        value = std::numeric_limits<double>::infinity();
      }
      if (!std::isfinite(value)) {
        finite = false;
        break;
      }
      previous = current;
      current = value;
    }
    if (!finite || (previous > 0.0 && current / previous >= 1.05)) {
      out.infinite = true;
    } else {
      out.weighting_term = current;
    }
  }
  out.state_term = v_state(instance, instance.regression.eval, spec);
  if (!out.infinite) out.value = out.state_term + out.weighting_term;
  return out;
}

// ---------------------------------------------------------------------------------------------
// Effective dimension

double effective_dimension(const Eigen::VectorXd& eigenvalues, const Eigen::MatrixXd& feature_rows, double rho) {
  if (!(rho > 0.0)) throw InputError("rho must be positive");
  if (feature_rows.rows() == 0) throw InputError("grid must be nonempty");
  if (feature_rows.cols() != eigenvalues.size()) throw InputError("feature width does not match eigenvalues");
  const Eigen::VectorXd damp = (eigenvalues.array() / (eigenvalues.array() + rho)).matrix();
  return (feature_rows.array().square().matrix() * damp).maxCoeff();
}

double effective_dimension(const EigenSystem& eig, double rho, const std::vector<Point>& grid) {
  if (grid.empty()) throw InputError("grid must be nonempty");
  return effective_dimension(eig.eigenvalues(), eig.feature_matrix(grid), rho);
}

std::vector<Point> default_grid(const ProblemInstance& instance, int size) {
  if (size < 2) throw InputError("grid size must be >= 2");
  std::vector<Point> grid;
  if (instance.binary_actions()) {
    if (instance.state_dim != 1) throw InputError("default grid supports scalar states for binary actions");
    const int half = size / 2;
    for (int k = 0; k < half; ++k) {
      const double p = (k + 0.5) / half;
      const double s = has_interval_support(instance.state_law) ? p : state_quantile(instance.state_law, p);
      grid.push_back(Point::binary(s, 1));
      grid.push_back(Point::binary(s, 0));
    }
    return grid;
  }
  // Kronecker sequence on the torus.
  static constexpr int primes[] = {2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37};
  const int dims = instance.state_dim + instance.action_dim;
  if (dims > 12) throw InputError("default grid supports at most 12 torus coordinates");
  for (int k = 1; k <= size; ++k) {
    Eigen::VectorXd s(instance.state_dim), a(instance.action_dim);
    for (int d = 0; d < dims; ++d) {
      const double step = std::sqrt(static_cast<double>(primes[d]));
      double v = k * step;
      v -= std::floor(v);
      (d < instance.state_dim ? s[d] : a[d - instance.state_dim]) = v;
    }
    grid.push_back(Point::continuous(std::move(s), std::move(a)));
  }
  return grid;
}

// ---------------------------------------------------------------------------------------------
// Minimax rates

RatePrediction minimax_rate(const RateQuery& query) {
  if (const auto* q = std::get_if<SingularRateQuery>(&query)) {
    if (!(q->alpha >= 0.0) || !std::isfinite(q->alpha)) throw InputError("alpha must be a finite value >= 0");
    RatePrediction r;
    if (!q->x0) {
      r.family = "singular_missing_data/average";
      if (q->alpha < 1.0) {
        r.exponent = -1.0;
      } else if (q->alpha == 1.0) {
        r.exponent = -1.0;
        r.log_power = 1;
      } else {
        r.exponent = -3.0 / (q->alpha + 2.0);
      }
      return r;
    }
    const double x0 = *q->x0;
    if (!(x0 >= 0.0 && x0 <= 1.0)) throw InputError("x0 must lie in [0, 1]");
    r.family = "singular_missing_data/point";
    if (x0 == 0.0) {
      r.zero_risk = true;
      r.exponent = 0.0;
    } else if (x0 < 1.0) {
      r.exponent = -0.5;
    } else {
      r.exponent = -1.0 / (2.0 + q->alpha);
    }
    return r;
  }
  const auto& c = std::get<ContinuumRateQuery>(query);
  if (c.state_dim < 1 || c.action_dim < 1) throw InputError("dimensions must be >= 1");
  if (!(c.smoothness > 0.5 * (c.state_dim + c.action_dim))) {
    throw InputError("smoothness must exceed (d_x + d_a) / 2");
  }
  RatePrediction r;
  r.family = c.point ? "continuum_bandit/point" : "continuum_bandit/average";
  const double dims = c.point ? c.action_dim + c.state_dim : c.action_dim;
  r.exponent = dims / (2.0 * c.smoothness) - 1.0;
  return r;
}

}  // namespace kpe
