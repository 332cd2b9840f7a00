#include "kpe/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <map>
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

void require_finite(const Eigen::VectorXd& v, const char* what) {
  if (!v.allFinite()) throw InputError(std::string("non-finite coordinate in ") + what);
}

void require_torus(const Eigen::VectorXd& v, const char* what) {
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    if (v[i] < 0.0 || v[i] >= 1.0) {
      throw InputError(std::string(what) + " coordinate outside the torus [0, 1)");
    }
  }
}

int discrete_label(const Point& u) {
  if (!u.has_discrete_action()) throw InputError("kernel expects a discrete action label");
  return u.label();
}

bool coupled(ActionCoupling c, int a, int b) {
  if (c == ActionCoupling::kTreatedOnly) return a != 0 && b != 0;
  return a == b;
}

// -1 marks points on which the kernel vanishes identically.
int chain_of(ActionCoupling c, int label) {
  if (c == ActionCoupling::kTreatedOnly) return label == 0 ? -1 : 0;
  return label;
}

double mode_eigenvalue(double s, std::span<const int> freq, int state_dim) {
  double nx = 0.0, na = 0.0;
  for (int i = 0; i < static_cast<int>(freq.size()); ++i) {
    const double f2 = static_cast<double>(freq[i]) * freq[i];
    (i < state_dim ? nx : na) += f2;
  }
  return std::min(std::pow(1.0 + nx, -s), std::pow(1.0 + na, -s));
}

}  // namespace

// ---------------------------------------------------------------------------------------------
// FourierBasis

FourierBasis::FourierBasis(double smoothness, int state_dim, int action_dim, int truncation)
    : smoothness_(smoothness), state_dim_(state_dim), action_dim_(action_dim) {
  if (state_dim < 1 || action_dim < 1) throw InputError("periodic Sobolev dimensions must be >= 1");
  if (!(smoothness > 0.5 * (state_dim + action_dim))) {
    throw InputError("periodic Sobolev smoothness must exceed (d_x + d_a) / 2");
  }
  if (truncation < 1) throw InputError("periodic Sobolev truncation must be >= 1");

  const int dim = state_dim + action_dim;
  for (int half_width = 1;; half_width *= 2) {
    // Canonical representatives: zero, or first nonzero coordinate positive.
    struct Candidate {
      std::vector<int> freq;
      double eigenvalue;
    };
    std::vector<Candidate> candidates;
    std::vector<int> freq(dim, -half_width);
    while (true) {
      auto first_nonzero = std::find_if(freq.begin(), freq.end(), [](int f) { return f != 0; });
      if (first_nonzero == freq.end() || *first_nonzero > 0) {
        candidates.push_back({freq, mode_eigenvalue(smoothness, freq, state_dim)});
      }
      int k = dim - 1;
      while (k >= 0 && freq[k] == half_width) {
        freq[k] = -half_width;
        --k;
      }
      if (k < 0) break;
      ++freq[k];
    }
    std::stable_sort(candidates.begin(), candidates.end(),
                     [](const Candidate& a, const Candidate& b) { return a.eigenvalue > b.eigenvalue; });

    std::vector<Mode> modes;
    double last = 0.0;
    for (const auto& c : candidates) {
      if (static_cast<int>(modes.size()) >= truncation) break;
      const bool zero = std::all_of(c.freq.begin(), c.freq.end(), [](int f) { return f == 0; });
      if (zero) {
        modes.push_back({c.freq, Mode::Kind::kConstant, c.eigenvalue});
      } else {
        modes.push_back({c.freq, Mode::Kind::kCos, c.eigenvalue});
        modes.push_back({c.freq, Mode::Kind::kSin, c.eigenvalue});
      }
      last = c.eigenvalue;
    }
    // Any frequency outside the box has a component norm >= half_width + 1.
    const double outside = std::pow(1.0 + (half_width + 1.0) * (half_width + 1.0), -smoothness);
    if (static_cast<int>(modes.size()) >= truncation && last > outside) {
      modes_ = std::move(modes);
      eigenvalues_.resize(size());
      for (int j = 0; j < size(); ++j) eigenvalues_[j] = modes_[j].eigenvalue;
      return;
    }
  }
}

void FourierBasis::evaluate(const Eigen::VectorXd& state, const Eigen::VectorXd& action,
                            Eigen::Ref<Eigen::VectorXd> out) const {
  constexpr double two_pi = 2.0 * std::numbers::pi;
  const double root2 = std::numbers::sqrt2;
  for (int j = 0; j < size(); ++j) {
    const Mode& m = modes_[j];
    if (m.kind == Mode::Kind::kConstant) {
      out[j] = 1.0;
      continue;
    }
    double phase = 0.0;
    for (int i = 0; i < state_dim_; ++i) phase += m.frequency[i] * state[i];
    for (int i = 0; i < action_dim_; ++i) phase += m.frequency[state_dim_ + i] * action[i];
    phase *= two_pi;
    out[j] = root2 * (m.kind == Mode::Kind::kCos ? std::cos(phase) : std::sin(phase));
  }
}

// ---------------------------------------------------------------------------------------------
// KernelSpec

KernelSpec KernelSpec::laplacian(double scale, ActionCoupling coupling) {
  if (!(scale > 0.0) || !std::isfinite(scale)) throw InputError("Laplacian scale must be positive");
  return KernelSpec(LaplacianKernel{scale, coupling}, 1.0);
}

KernelSpec KernelSpec::sobolev_min(ActionCoupling coupling) {
  return KernelSpec(SobolevMinKernel{coupling}, 1.0);
}

KernelSpec KernelSpec::periodic_sobolev(double smoothness, int state_dim, int action_dim,
                                        int truncation) {
  auto basis = std::make_shared<const FourierBasis>(smoothness, state_dim, action_dim, truncation);
  const double kappa_sq = basis->eigenvalues().sum();
  return KernelSpec(PeriodicSobolevKernel{std::move(basis)}, kappa_sq);
}

KernelSpec KernelSpec::tabulated_mercer(Eigen::VectorXd eigenvalues, FeatureMap features) {
  if (eigenvalues.size() == 0 || (eigenvalues.array() <= 0.0).any()) {
    throw InputError("tabulated Mercer kernel needs positive eigenvalues");
  }
  if (!features) throw InputError("tabulated Mercer kernel needs a feature map");
  // Reported bound assumes |phi_j| <= 1.
  const double kappa_sq = eigenvalues.sum();
  return KernelSpec(TabulatedMercerKernel{std::move(eigenvalues), std::move(features)}, kappa_sq);
}

bool KernelSpec::is_markov() const {
  return std::holds_alternative<LaplacianKernel>(family_) ||
         std::holds_alternative<SobolevMinKernel>(family_);
}

std::string KernelSpec::describe() const {
  std::ostringstream os;
  const auto coupling_name = [](ActionCoupling c) {
    return c == ActionCoupling::kTreatedOnly ? "treated_only" : "per_action";
  };
  std::visit(Overloaded{
                 [&](const LaplacianKernel& k) {
                   os << "laplacian(scale=" << k.scale << ", " << coupling_name(k.coupling) << ")";
                 },
                 [&](const SobolevMinKernel& k) { os << "sobolev_min(" << coupling_name(k.coupling) << ")"; },
                 [&](const PeriodicSobolevKernel& k) {
                   os << "periodic_sobolev(s=" << k.basis->smoothness() << ", d_x=" << k.basis->state_dim()
                      << ", d_a=" << k.basis->action_dim() << ", J=" << k.basis->size() << ")";
                 },
                 [&](const TabulatedMercerKernel& k) { os << "tabulated_mercer(J=" << k.eigenvalues.size() << ")"; },
             },
             family_);
  return os.str();
}

// ---------------------------------------------------------------------------------------------
// Evaluation

namespace {

Eigen::VectorXd features_of(const KernelSpec& spec, const Point& u) {
  return std::visit(
      Overloaded{
          [&](const PeriodicSobolevKernel& k) -> Eigen::VectorXd {
            const auto& b = *k.basis;
            if (u.state.size() != b.state_dim()) throw InputError("state dimension mismatch");
            if (u.has_discrete_action()) throw InputError("periodic Sobolev kernel expects continuous actions");
            const auto& a = u.action_vector();
            if (a.size() != b.action_dim()) throw InputError("action dimension mismatch");
            require_finite(u.state, "state");
            require_finite(a, "action");
            require_torus(u.state, "state");
            require_torus(a, "action");
            Eigen::VectorXd out(b.size());
            b.evaluate(u.state, a, out);
            return out;
          },
          [&](const TabulatedMercerKernel& k) -> Eigen::VectorXd {
            require_finite(u.state, "state");
            Eigen::VectorXd out = k.features(u);
            if (out.size() != k.eigenvalues.size()) throw InputError("feature map length mismatch");
            if (!out.allFinite()) throw InputError("non-finite feature value");
            return out;
          },
          [&](const auto&) -> Eigen::VectorXd { return {}; },
      },
      spec.family());
}

const Eigen::VectorXd& spectral_weights(const KernelSpec& spec) {
  if (const auto* p = std::get_if<PeriodicSobolevKernel>(&spec.family())) return p->basis->eigenvalues();
  return std::get<TabulatedMercerKernel>(spec.family()).eigenvalues;
}

double spectral_sum(const Eigen::VectorXd& lambda, const Eigen::VectorXd& fa, const Eigen::VectorXd& fb) {
  double acc = 0.0;
  for (Eigen::Index j = 0; j < lambda.size(); ++j) acc += lambda[j] * (fa[j] * fb[j]);
  return acc;
}

double scalar_kernel(const KernelSpec& spec, const Point& u, const Point& v) {
  return std::visit(
      Overloaded{
          [&](const LaplacianKernel& k) {
            if (u.state.size() != v.state.size()) throw InputError("state dimension mismatch");
            require_finite(u.state, "state");
            require_finite(v.state, "state");
            if (!coupled(k.coupling, discrete_label(u), discrete_label(v))) return 0.0;
            double l1 = 0.0;
            for (Eigen::Index i = 0; i < u.state.size(); ++i) l1 += std::abs(u.state[i] - v.state[i]);
            return std::exp(-k.scale * l1);
          },
          [&](const SobolevMinKernel& k) {
            if (u.state.size() != 1 || v.state.size() != 1) {
              throw InputError("min kernel expects scalar states");
            }
            require_finite(u.state, "state");
            require_finite(v.state, "state");
            if (u.state[0] < 0.0 || v.state[0] < 0.0) throw InputError("min kernel expects states >= 0");
            if (!coupled(k.coupling, discrete_label(u), discrete_label(v))) return 0.0;
            return std::min(u.state[0], v.state[0]);
          },
          [&](const auto&) -> double { return 0.0; },
      },
      spec.family());
}

}  // namespace

double kernel_eval(const KernelSpec& spec, const Point& u, const Point& u2) {
  if (spec.is_markov()) return scalar_kernel(spec, u, u2);
  return spectral_sum(spectral_weights(spec), features_of(spec, u), features_of(spec, u2));
}

GramMatrix gram_matrix(const KernelSpec& spec, std::vector<Point> points) {
  const auto n = static_cast<Eigen::Index>(points.size());
  if (n < 1) throw InputError("Gram matrix needs at least one point");
  Eigen::MatrixXd k(n, n);
  if (spec.is_markov()) {
    for (Eigen::Index i = 0; i < n; ++i) {
      for (Eigen::Index j = 0; j <= i; ++j) {
        k(i, j) = k(j, i) = scalar_kernel(spec, points[i], points[j]);
      }
    }
  } else {
    const Eigen::VectorXd& lambda = spectral_weights(spec);
    std::vector<Eigen::VectorXd> feats;
    feats.reserve(points.size());
    for (const auto& p : points) feats.push_back(features_of(spec, p));
    for (Eigen::Index i = 0; i < n; ++i) {
      for (Eigen::Index j = 0; j <= i; ++j) k(i, j) = k(j, i) = spectral_sum(lambda, feats[i], feats[j]);
    }
  }
  return GramMatrix(spec, std::move(points), std::move(k));
}

Eigen::MatrixXd cross_kernel(const KernelSpec& spec, std::span<const Point> a, std::span<const Point> b) {
  Eigen::MatrixXd out(a.size(), b.size());
  if (spec.is_markov()) {
    for (size_t i = 0; i < a.size(); ++i)
      for (size_t j = 0; j < b.size(); ++j) out(i, j) = scalar_kernel(spec, a[i], b[j]);
    return out;
  }
  const Eigen::VectorXd& lambda = spectral_weights(spec);
  std::vector<Eigen::VectorXd> fb;
  fb.reserve(b.size());
  for (const auto& p : b) fb.push_back(features_of(spec, p));
  for (size_t i = 0; i < a.size(); ++i) {
    const Eigen::VectorXd fa = features_of(spec, a[i]);
    for (size_t j = 0; j < b.size(); ++j) out(i, j) = spectral_sum(lambda, fa, fb[j]);
  }
  return out;
}

double GramMatrix::min_eigenvalue() const {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(entries_, Eigen::EigenvaluesOnly);
  return es.eigenvalues()[0];
}

bool GramMatrix::is_psd_within_tolerance() const {
  const double n = static_cast<double>(entries_.rows());
  return min_eigenvalue() >= -1e-8 * entries_.trace() / n;
}

// ---------------------------------------------------------------------------------------------
// Dense solve

namespace {

void validate_solve(Eigen::Index n, const Eigen::VectorXd& targets, double ridge,
                    const std::optional<Eigen::VectorXd>& weights) {
  if (!(ridge > 0.0) || !std::isfinite(ridge)) throw InputError("ridge must be positive and finite");
  if (targets.size() != n) throw InputError("targets length does not match the Gram matrix");
  if (!targets.allFinite()) throw InputError("targets must be finite");
  if (weights) {
    if (weights->size() != n) throw InputError("weights length does not match the Gram matrix");
    if (!((weights->array() > 0.0).all()) || !weights->allFinite()) {
      throw InputError("weights must be strictly positive and finite");
    }
  }
}

}  // namespace

Eigen::VectorXd regularized_solve(const Eigen::MatrixXd& gram, const Eigen::VectorXd& targets,
                                  double ridge, const std::optional<Eigen::VectorXd>& weights) {
  const Eigen::Index n = gram.rows();
  if (gram.cols() != n || n == 0) throw InputError("Gram matrix must be square and nonempty");
  validate_solve(n, targets, ridge, weights);
  const double shift = static_cast<double>(n) * ridge;

  // Weighted case symmetrised through alpha = W^(1/2) beta.
  Eigen::VectorXd root_w;
  Eigen::MatrixXd system;
  Eigen::VectorXd rhs;
  if (weights) {
    root_w = weights->array().sqrt();
    system = root_w.asDiagonal() * gram * root_w.asDiagonal();
    rhs = root_w.cwiseProduct(targets);
  } else {
    system = gram;
    rhs = targets;
  }
  system.diagonal().array() += shift;

  Eigen::LLT<Eigen::MatrixXd> llt(system);
  double jitter = 0.0;
  if (llt.info() != Eigen::Success) {
    jitter = 1e-10 * gram.trace() / static_cast<double>(n);
    system.diagonal().array() += jitter;
    llt.compute(system);
    if (llt.info() != Eigen::Success) {
      throw NumericalError("Cholesky factorization failed after jitter retry", jitter);
    }
  }
  Eigen::VectorXd solution = llt.solve(rhs);
  if (weights) solution = root_w.cwiseProduct(solution);
  return solution;
}

Eigen::VectorXd regularized_solve(const GramMatrix& gram, const Eigen::VectorXd& targets, double ridge,
                                  const std::optional<Eigen::VectorXd>& weights) {
  return regularized_solve(gram.entries(), targets, ridge, weights);
}

// ---------------------------------------------------------------------------------------------
// Markov path

namespace {

struct MarkovParams {
  bool laplacian;
  double scale;
  ActionCoupling coupling;
};

MarkovParams markov_params(const KernelSpec& spec) {
  if (const auto* l = std::get_if<LaplacianKernel>(&spec.family())) return {true, l->scale, l->coupling};
  if (const auto* m = std::get_if<SobolevMinKernel>(&spec.family())) return {false, 0.0, m->coupling};
  throw InputError("structured solver requires a Laplacian or min kernel");
}

void validate_points(const MarkovParams& p, ScalarPoints pts) {
  if (pts.states.size() != pts.labels.size()) throw InputError("states and labels differ in length");
  for (double s : pts.states) {
    if (!std::isfinite(s)) throw InputError("non-finite coordinate in state");
    if (!p.laplacian && s < 0.0) throw InputError("min kernel expects states >= 0");
  }
}

// Unique sorted states of one chain, with the member indices of each.
struct Chain {
  std::vector<double> states;
  std::vector<std::vector<int>> members;
};

std::map<int, Chain> build_chains(const MarkovParams& p, ScalarPoints pts, std::vector<int>* null_points) {
  std::map<int, std::vector<int>> by_chain;
  for (int i = 0; i < static_cast<int>(pts.states.size()); ++i) {
    const int c = chain_of(p.coupling, pts.labels[i]);
    // The min kernel vanishes at state 0.
    if (c < 0 || (!p.laplacian && pts.states[i] == 0.0)) {
      if (null_points) null_points->push_back(i);
      continue;
    }
    by_chain[c].push_back(i);
  }
  std::map<int, Chain> chains;
  for (auto& [id, idx] : by_chain) {
    std::stable_sort(idx.begin(), idx.end(), [&](int a, int b) { return pts.states[a] < pts.states[b]; });
    Chain ch;
    for (int i : idx) {
      if (ch.states.empty() || pts.states[i] != ch.states.back()) {
        ch.states.push_back(pts.states[i]);
        ch.members.emplace_back();
      }
      ch.members.back().push_back(i);
    }
    chains.emplace(id, std::move(ch));
  }
  return chains;
}

// Tridiagonal precision of the kernel restricted to sorted distinct states.
void markov_precision(const MarkovParams& p, const std::vector<double>& t, std::vector<double>& diag,
                      std::vector<double>& off) {
  const size_t g = t.size();
  diag.assign(g, 0.0);
  off.assign(g > 0 ? g - 1 : 0, 0.0);
  diag[0] += p.laplacian ? 1.0 : 1.0 / t[0];
  for (size_t k = 0; k + 1 < g; ++k) {
    const double gap = t[k + 1] - t[k];
    double a, q;
    if (p.laplacian) {
      a = std::exp(-p.scale * gap);
      q = -std::expm1(-2.0 * p.scale * gap);
    } else {
      a = 1.0;
      q = gap;
    }
    diag[k] += a * a / q;
    diag[k + 1] += 1.0 / q;
    off[k] = -a / q;
  }
}

// Thomas algorithm for a symmetric diagonally dominant tridiagonal system.
std::vector<double> solve_tridiagonal(std::vector<double> diag, const std::vector<double>& off,
                                      std::vector<double> rhs) {
  const size_t g = diag.size();
  for (size_t k = 1; k < g; ++k) {
    const double m = off[k - 1] / diag[k - 1];
    diag[k] -= m * off[k - 1];
    rhs[k] -= m * rhs[k - 1];
  }
  rhs[g - 1] /= diag[g - 1];
  for (size_t k = g - 1; k-- > 0;) rhs[k] = (rhs[k] - off[k] * rhs[k + 1]) / diag[k];
  return rhs;
}

}  // namespace

Eigen::VectorXd markov_regularized_solve(const KernelSpec& spec, ScalarPoints train,
                                         const Eigen::VectorXd& targets, double ridge,
                                         const std::optional<Eigen::VectorXd>& weights) {
  const MarkovParams p = markov_params(spec);
  validate_points(p, train);
  const auto n = static_cast<Eigen::Index>(train.states.size());
  if (n == 0) throw InputError("structured solve needs at least one point");
  validate_solve(n, targets, ridge, weights);
  const double shift = static_cast<double>(n) * ridge;
  const Eigen::VectorXd w = weights ? *weights : Eigen::VectorXd::Ones(n);

  Eigen::VectorXd alpha(n);
  std::vector<int> null_points;
  const auto chains = build_chains(p, train, &null_points);
  for (int i : null_points) alpha[i] = w[i] * targets[i] / shift;

  std::vector<double> diag, off;
  for (const auto& [id, ch] : chains) {
    markov_precision(p, ch.states, diag, off);
    const size_t g = ch.states.size();
    std::vector<double> rhs(g, 0.0);
    for (size_t k = 0; k < g; ++k) {
      double wsum = 0.0;
      for (int i : ch.members[k]) {
        rhs[k] += w[i] * targets[i];
        wsum += w[i];
      }
      diag[k] = shift * diag[k] + wsum;
      if (k + 1 < g) off[k] *= shift;
    }
    const std::vector<double> f = solve_tridiagonal(diag, off, rhs);
    for (size_t k = 0; k < g; ++k) {
      for (int i : ch.members[k]) alpha[i] = w[i] * (targets[i] - f[k]) / shift;
    }
  }
  return alpha;
}

Eigen::VectorXd markov_predict(const KernelSpec& spec, ScalarPoints train, const Eigen::VectorXd& alpha,
                               ScalarPoints queries) {
  const MarkovParams p = markov_params(spec);
  validate_points(p, train);
  validate_points(p, queries);
  if (alpha.size() != static_cast<Eigen::Index>(train.states.size())) {
    throw InputError("coefficient length does not match the training set");
  }
  Eigen::VectorXd out = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(queries.states.size()));
  const auto chains = build_chains(p, train, nullptr);

  std::map<int, std::vector<int>> query_chains;
  for (int q = 0; q < static_cast<int>(queries.states.size()); ++q) {
    const int c = chain_of(p.coupling, queries.labels[q]);
    if (c >= 0) query_chains[c].push_back(q);
  }

  for (auto& [id, qidx] : query_chains) {
    auto it = chains.find(id);
    if (it == chains.end()) continue;
    const Chain& ch = it->second;
    const size_t g = ch.states.size();
    std::vector<double> coef(g, 0.0);
    for (size_t k = 0; k < g; ++k)
      for (int i : ch.members[k]) coef[k] += alpha[i];

    std::stable_sort(qidx.begin(), qidx.end(),
                     [&](int a, int b) { return queries.states[a] < queries.states[b]; });

    if (p.laplacian) {
      // Forward: sum over t_k <= x of c_k exp(-scale (x - t_k)).
      double acc = 0.0, pos = 0.0;
      size_t k = 0;
      for (int q : qidx) {
        const double x = queries.states[q];
        while (k < g && ch.states[k] <= x) {
          acc = (k == 0 && acc == 0.0) ? coef[k] : acc * std::exp(-p.scale * (ch.states[k] - pos)) + coef[k];
          pos = ch.states[k];
          ++k;
        }
        if (k > 0) out[q] += acc * std::exp(-p.scale * (x - pos));
      }
      // Backward: sum over t_k > x of c_k exp(-scale (t_k - x)).
      acc = 0.0;
      pos = 0.0;
      size_t remaining = g;
      for (auto qi = qidx.rbegin(); qi != qidx.rend(); ++qi) {
        const double x = queries.states[*qi];
        while (remaining > 0 && ch.states[remaining - 1] > x) {
          const size_t kk = remaining - 1;
          acc = (kk == g - 1) ? coef[kk] : acc * std::exp(-p.scale * (pos - ch.states[kk])) + coef[kk];
          pos = ch.states[kk];
          --remaining;
        }
        if (remaining < g) out[*qi] += acc * std::exp(-p.scale * (pos - x));
      }
    } else {
      // sum_{t_k <= x} c_k t_k + x * sum_{t_k > x} c_k
      double total = std::accumulate(coef.begin(), coef.end(), 0.0);
      double below_weighted = 0.0, below = 0.0;
      size_t k = 0;
      for (int q : qidx) {
        const double x = queries.states[q];
        while (k < g && ch.states[k] <= x) {
          below_weighted += coef[k] * ch.states[k];
          below += coef[k];
          ++k;
        }
        out[q] = below_weighted + x * (total - below);
      }
    }
  }
  return out;
}

}  // namespace kpe
