#pragma once

// Kernel evaluation, Gram assembly and regularized linear solves shared by every estimator.

#include <Eigen/Dense>

#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "kpe/point.hpp"

namespace kpe {

/// How a scalar-state kernel treats the action coordinate.
enum class ActionCoupling {
  kTreatedOnly,  ///< K vanishes if either action label is 0 (missing-data convention).
  kPerAction,    ///< K(u, u') = k(s, s') * 1[a == a'].
};

/// Real Fourier basis on the torus T^(d_x + d_a), ordered by nonincreasing eigenvalue.
///
/// Each nonzero frequency m contributes the pair sqrt(2)cos(2 pi m.u), sqrt(2)sin(2 pi m.u),
/// which spans the same space as the complex modes exp(+-2 pi i m.u). Eigenvalues follow
/// min{(1 + |m_x|^2)^(-s), (1 + |m_a|^2)^(-s)}, normalised so the constant mode has 1.
class FourierBasis {
 public:
  struct Mode {
    std::vector<int> frequency;  // length d_x + d_a
    enum class Kind { kConstant, kCos, kSin } kind;
    double eigenvalue;
  };

  FourierBasis(double smoothness, int state_dim, int action_dim, int truncation);

  int size() const { return static_cast<int>(modes_.size()); }
  int state_dim() const { return state_dim_; }
  int action_dim() const { return action_dim_; }
  double smoothness() const { return smoothness_; }
  const std::vector<Mode>& modes() const { return modes_; }
  const Eigen::VectorXd& eigenvalues() const { return eigenvalues_; }

  /// All basis functions at u = (s, a); `out` must have size() entries.
  void evaluate(const Eigen::VectorXd& state, const Eigen::VectorXd& action,
                Eigen::Ref<Eigen::VectorXd> out) const;

 private:
  double smoothness_;
  int state_dim_;
  int action_dim_;
  std::vector<Mode> modes_;
  Eigen::VectorXd eigenvalues_;
};

/// Feature map phi(u) for a tabulated Mercer kernel K(u, u') = sum_j lambda_j phi_j(u) phi_j(u').
using FeatureMap = std::function<Eigen::VectorXd(const Point&)>;

struct LaplacianKernel {
  double scale = 2.0;
  ActionCoupling coupling = ActionCoupling::kTreatedOnly;
};

struct SobolevMinKernel {
  ActionCoupling coupling = ActionCoupling::kTreatedOnly;
};

struct PeriodicSobolevKernel {
  std::shared_ptr<const FourierBasis> basis;
};

struct TabulatedMercerKernel {
  Eigen::VectorXd eigenvalues;
  FeatureMap features;
};

/// Positive semidefinite kernel defining the hypothesis RKHS. Immutable; cheap to copy.
class KernelSpec {
 public:
  using Family = std::variant<LaplacianKernel, SobolevMinKernel, PeriodicSobolevKernel,
                              TabulatedMercerKernel>;

  static KernelSpec laplacian(double scale, ActionCoupling coupling = ActionCoupling::kTreatedOnly);
  static KernelSpec sobolev_min(ActionCoupling coupling = ActionCoupling::kTreatedOnly);
  static KernelSpec periodic_sobolev(double smoothness, int state_dim, int action_dim,
                                     int truncation = 400);
  static KernelSpec tabulated_mercer(Eigen::VectorXd eigenvalues, FeatureMap features);

  const Family& family() const { return family_; }

  /// Uniform bound kappa^2 >= sup_u K(u, u). For the min kernel this assumes states in [0, 1].
  double kappa_squared() const { return kappa_sq_; }

  /// True for scalar-state Laplacian / min kernels whose per-action restriction is Gauss-Markov.
  bool is_markov() const;

  std::string describe() const;

 private:
  explicit KernelSpec(Family f, double kappa_sq) : family_(std::move(f)), kappa_sq_(kappa_sq) {}
  Family family_;
  double kappa_sq_;
};

/// K(u, u2). Throws InputError on dimension mismatch, non-finite coordinates or points
/// outside the kernel's domain.
double kernel_eval(const KernelSpec& spec, const Point& u, const Point& u2);

/// Dense symmetric Gram matrix over a point set.
class GramMatrix {
 public:
  GramMatrix(KernelSpec kernel, std::vector<Point> points, Eigen::MatrixXd entries)
      : kernel_(std::move(kernel)), points_(std::move(points)), entries_(std::move(entries)) {}

  const Eigen::MatrixXd& entries() const { return entries_; }
  const KernelSpec& kernel() const { return kernel_; }
  const std::vector<Point>& points() const { return points_; }
  Eigen::Index size() const { return entries_.rows(); }

  double min_eigenvalue() const;
  /// Smallest eigenvalue >= -1e-8 * trace / n.
  bool is_psd_within_tolerance() const;

 private:
  KernelSpec kernel_;
  std::vector<Point> points_;
  Eigen::MatrixXd entries_;
};

GramMatrix gram_matrix(const KernelSpec& spec, std::vector<Point> points);

/// Cross-kernel matrix K(a_i, b_j).
Eigen::MatrixXd cross_kernel(const KernelSpec& spec, std::span<const Point> a,
                             std::span<const Point> b);

/// Solves (K + n ridge I) alpha = y, or (W K + n ridge I) alpha = W y when weights are given.
/// Cholesky path with one jittered retry (1e-10 * trace(K) / n on the diagonal).
Eigen::VectorXd regularized_solve(const GramMatrix& gram, const Eigen::VectorXd& targets,
                                  double ridge,
                                  const std::optional<Eigen::VectorXd>& weights = std::nullopt);

/// Same contract as regularized_solve, on a raw symmetric matrix.
Eigen::VectorXd regularized_solve(const Eigen::MatrixXd& gram, const Eigen::VectorXd& targets,
                                  double ridge,
                                  const std::optional<Eigen::VectorXd>& weights = std::nullopt);

// ---------------------------------------------------------------------------------------------
// Structured path for Markov kernels (scalar state, Laplacian or min).
//
// Within one action chain the kernel exp(-c|t - t'|) resp. min(t, t') is the covariance of a
// Gauss-Markov process, so its inverse on sorted distinct points is tridiagonal. Writing
// f = K alpha, the system (W K + n ridge I) alpha = W y becomes (n ridge Q + W) f = W y with Q
// tridiagonal, and alpha = W (y - f) / (n ridge). Duplicate states are aggregated.

/// Scalar-state training or query data for the structured path.
struct ScalarPoints {
  std::span<const double> states;
  std::span<const int> labels;
};

/// Same contract as regularized_solve for a Markov kernel; O(n log n).
Eigen::VectorXd markov_regularized_solve(const KernelSpec& spec, ScalarPoints train,
                                         const Eigen::VectorXd& targets, double ridge,
                                         const std::optional<Eigen::VectorXd>& weights = std::nullopt);

/// Evaluates sum_i alpha_i K(q, u_i) at every query by prefix sweeps; O((n + m) log(n + m)).
Eigen::VectorXd markov_predict(const KernelSpec& spec, ScalarPoints train,
                               const Eigen::VectorXd& alpha, ScalarPoints queries);

}  // namespace kpe
