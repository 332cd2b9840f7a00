#include <doctest.h>

#include <cmath>

#include "fixtures.hpp"
#include "kpe/errors.hpp"
#include "kpe/estimators.hpp"

using namespace kpe;

namespace {

const KernelSpec kLap = KernelSpec::laplacian(2.0);
const WeightFunctional kMissing = WeightFunctional::missing_data();

ProblemInstance noiseless(double c) {
  return missing_data_instance(StateLaw::kUniform01, Propensity::constant(0.6), Regression::constant(c),
                               NoiseModel::constant(0.0));
}

Dataset zero_outcomes(Eigen::Index n) {
  auto d = sample_dataset(singular_missing_data(1.0), n, 12);
  d.outcomes.setZero();
  return d;
}

CondVarEstimator pinned(double v) {
  CondVarEstimator c;
  c.clamp = ClampInterval{v, v};
  return c;
}

}  // namespace

TEST_CASE("krr_fit examples") {
  const auto zero = krr_fit(zero_outcomes(40), kLap, 1e-2);
  CHECK(zero.predict(Point::binary(0.3, 1)) == 0.0);

  const auto d = test::binary_data({0.0, 1.0}, {1, 1}, {1.0, 0.0});
  Eigen::MatrixXd k(2, 2);
  k << 1.0, std::exp(-2.0), std::exp(-2.0), 1.0;
  const Eigen::VectorXd oracle = (k + 2.0 * Eigen::MatrixXd::Identity(2, 2)).fullPivLu().inverse() * Eigen::Vector2d(1.0, 0.0);
  for (auto path : {SolvePath::kDense, SolvePath::kStructured}) {
    const auto m = krr_fit(d, kLap, 1.0, std::nullopt, path);
    CHECK((m.dual_coefficients - oracle).norm() < 1e-14);
  }
}

TEST_CASE("duplicating every observation leaves predictions unchanged") {
  // The ridge multiplies the sample size, so doubling the data at the same ridge is the identity.
  const auto d = sample_dataset(singular_missing_data(1.0), 60, 4);
  const auto twice = Dataset::concat(d, d);
  const auto a = krr_fit(d, kLap, 1e-2, std::nullopt, SolvePath::kDense);
  const auto b = krr_fit(twice, kLap, 1e-2, std::nullopt, SolvePath::kDense);
  Rng rng(1);
  for (int i = 0; i < 20; ++i) {
    const Point q = Point::binary(rng.uniform(), 1);
    CHECK(a.predict(q) == doctest::Approx(b.predict(q)).epsilon(1e-10));
  }
}

TEST_CASE("constant weights reduce to a rescaled ridge") {
  const auto d = sample_dataset(singular_missing_data(1.0), 80, 6);
  for (auto path : {SolvePath::kDense, SolvePath::kStructured}) {
    const auto weighted = krr_fit(d, kLap, 1e-2, Eigen::VectorXd::Constant(80, 2.5), path);
    const auto plain = krr_fit(d, kLap, 1e-2 / 2.5, std::nullopt, path);
    CHECK((weighted.dual_coefficients - plain.dual_coefficients).norm() <= 1e-8 * plain.dual_coefficients.norm());
  }
}

TEST_CASE("functional_average examples") {
  const auto zero = krr_fit(zero_outcomes(20), kLap, 1e-2);
  const Eigen::MatrixXd states = Eigen::MatrixXd::Constant(5, 1, 0.4);
  CHECK(functional_average(zero, states, kMissing) == 0.0);

  const auto flat = KernelSpec::tabulated_mercer(Eigen::VectorXd::Ones(1), [](const Point&) { return Eigen::VectorXd::Ones(1); });
  auto d = test::binary_data({0.1, 0.5, 0.9}, {1, 1, 1}, {2.0, 2.0, 2.0});
  const auto c = krr_fit(d, flat, 1e-12);
  CHECK(functional_average(c, states, kMissing) == doctest::Approx(2.0));

  const auto per_action = KernelSpec::laplacian(2.0, ActionCoupling::kPerAction);
  const auto m = krr_fit(test::binary_data({0.1, 0.5, 0.9, 0.3}, {1, 0, 1, 0}, {1.0, -1.0, 2.0, 0.5}), per_action, 1e-2);
  const Eigen::MatrixXd x = Eigen::MatrixXd::Constant(1, 1, 0.45);
  const double expected = (m.predict(Point::binary(0.45, 1)) - m.predict(Point::binary(0.45, 0))) / 2.0;
  CHECK(functional_average(m, x, WeightFunctional::treatment_effect()) == doctest::Approx(expected).epsilon(1e-14));
}

TEST_CASE("two-stage examples") {
  // A kernel holding constants on the treated action interpolates exactly.
  const auto affine = KernelSpec::tabulated_mercer(Eigen::Vector2d(1.0, 1.0), [](const Point& u) {
    const double a = u.label() == 1 ? 1.0 : 0.0;
    return Eigen::Vector2d(a, a * u.state[0]).eval();
  });
  const auto d = sample_dataset(noiseless(1.7), 20, 3);
  CHECK(std::abs(two_stage_estimate(d, affine, FixedRidge{1e-10}, kMissing) - 1.7) <= 1e-3);
  // The Laplacian interpolant decays away from the data, so it needs more points.
  const auto big = sample_dataset(noiseless(1.7), 2000, 3);
  CHECK(std::abs(two_stage_estimate(big, kLap, FixedRidge{1e-10}, kMissing) - 1.7) <= 1e-3);
  CHECK(two_stage_estimate(zero_outcomes(40), kLap, OptEmpiricalRidge{}, kMissing) == 0.0);
  CHECK_THROWS_AS(two_stage_estimate(zero_outcomes(3), kLap, OptEmpiricalRidge{}, kMissing), InputError);
}

TEST_CASE("two-stage equals its composition") {
  const auto d = sample_dataset(singular_missing_data(2.0), 8, 77);
  const auto first = d.slice(0, 4), second = d.slice(4, 8);
  const auto model = krr_fit(first, kLap, 0.5 / 4.0);
  CHECK(two_stage_estimate(d, kLap, OptEmpiricalRidge{}, kMissing) == functional_average(model, second.states, kMissing));

  const auto swapped = krr_fit(second, kLap, 0.5 / 4.0);
  const double mean = 0.5 * (functional_average(model, second.states, kMissing) +
                             functional_average(swapped, first.states, kMissing));
  CHECK(crossfit_two_stage(d, kLap, OptEmpiricalRidge{}, kMissing) == doctest::Approx(mean).epsilon(1e-15));
  CHECK(crossfit_two_stage(zero_outcomes(40), kLap, OptEmpiricalRidge{}, kMissing) == 0.0);

  const auto half = d.slice(0, 4);
  const auto mirrored = Dataset::concat(half, half);
  CHECK(crossfit_two_stage(mirrored, kLap, OptEmpiricalRidge{}, kMissing) ==
        doctest::Approx(two_stage_estimate(mirrored, kLap, OptEmpiricalRidge{}, kMissing)).epsilon(1e-15));
}

TEST_CASE("estimators are deterministic") {
  const auto d = sample_dataset(singular_missing_data(2.0), 400, 5);
  CHECK(crossfit_two_stage(d, kLap, OptEmpiricalRidge{}, kMissing) == crossfit_two_stage(d, kLap, OptEmpiricalRidge{}, kMissing));
  CHECK(four_stage_estimate(d, kLap, {}, {}, kMissing) == four_stage_estimate(d, kLap, {}, {}, kMissing));
}

TEST_CASE("conditional variance examples") {
  auto d = sample_dataset(singular_missing_data(1.0), 200, 2);
  const Point q = Point::binary(0.3, 1);
  CHECK(estimate_cond_var({}, d, Eigen::VectorXd::Constant(200, 1.7), q).value == doctest::Approx(1.7));
  CHECK(estimate_cond_var({}, d, Eigen::VectorXd::Constant(200, 9.0), q).value == 4.0);
  CHECK(estimate_cond_var({}, d, Eigen::VectorXd::Constant(200, 0.01), q).value == 0.25);

  CondVarEstimator tiny;
  tiny.method = LocalAverage{1e-9};
  const auto empty = estimate_cond_var(tiny, d, Eigen::VectorXd::Constant(200, 1.0), Point::binary(0.123456789, 1));
  CHECK(empty.degenerate);
  CHECK(empty.value == doctest::Approx((0.25 + 4.0) / 2.0));

  CondVarEstimator krr;
  krr.method = KrrSquaredResiduals{kLap};
  const auto v = estimate_cond_var(krr, d, Eigen::VectorXd::Constant(200, 30.0), q);
  CHECK(v.value == 4.0);
}

TEST_CASE("local averaging recovers a unit variance") {
  auto inst = missing_data_instance(StateLaw::kUniform01, Propensity::constant(0.5), Regression::constant(1.0));
  const auto d = sample_dataset(inst, 10000, 8);
  Eigen::VectorXd z(d.size());
  for (Eigen::Index i = 0; i < d.size(); ++i) z[i] = d.labels[i] == 1 ? std::pow(d.outcomes[i] - 1.0, 2) : 1.0;
  const FittedCondVar fitted({}, d, z, ClampInterval{});
  Rng rng(3);
  int close = 0;
  for (int i = 0; i < 20; ++i) close += std::abs(fitted.evaluate(Point::binary(rng.uniform(), 1)).value - 1.0) <= 0.3;
  CHECK(close >= 18);
  CHECK(fitted.radius() == doctest::Approx(std::pow(10000.0, -1.0 / 3.0)));
}

TEST_CASE("four-stage examples") {
  CHECK(four_stage_estimate(zero_outcomes(40), kLap, {}, {}, kMissing) == 0.0);
  CHECK_THROWS_AS(four_stage_estimate(zero_outcomes(7), kLap, {}, {}, kMissing), InputError);

  // A constant variance estimate turns Stage III into plain KRR at ridge sigma_bar^2 / (R^2 n).
  const auto d = sample_dataset(singular_missing_data(1.0), 40, 19);
  const FourStageParams params{1.5, 1.0};
  const double four = four_stage_estimate(d, kLap, pinned(2.25), params, kMissing);
  const double two = two_stage_on(d.slice(20, 30), d.slice(30, 40), kLap, FixedRidge{2.25 / 10.0}, kMissing);
  CHECK(four == doctest::Approx(two).epsilon(1e-10));
}

TEST_CASE("four-stage stays close to two-stage on the singular family") {
  const auto inst = singular_missing_data(2.0);
  const double tau = true_functional(inst);
  double mse_four = 0.0, mse_two = 0.0;
  const int trials = 200;
  for (int t = 0; t < trials; ++t) {
    const auto d = sample_dataset(inst, 12800, derive_seed(5, 12800, t));
    mse_four += std::pow(four_stage_estimate(d, kLap, {}, {}, kMissing) - tau, 2);
    mse_two += std::pow(two_stage_estimate(d, kLap, TheoryRidge{}, kMissing) - tau, 2);
  }
  CHECK(mse_four <= 2.0 * mse_two);
}

TEST_CASE("one-point examples") {
  const Eigen::VectorXd x0 = Eigen::VectorXd::Constant(1, 0.5);
  CHECK(one_point_estimate(zero_outcomes(30), kLap, {}, {}, kMissing, x0) == 0.0);

  auto inst = missing_data_instance(StateLaw::kUniform01, Propensity::constant(0.7), Regression::one_plus_cos(),
                                    NoiseModel::constant(0.0));
  const auto d = sample_dataset(inst, 60, 4);
  Eigen::Index train = 40;
  while (d.labels[train] != 1) ++train;
  const Eigen::VectorXd at = d.states.row(train).transpose();
  const FourStageParams sharp{1.0, 1e5};
  CHECK(std::abs(one_point_estimate(d, kLap, {}, sharp, kMissing, at) - (1.0 + std::cos(at[0]))) <= 1e-3);

  // Every min-kernel function vanishes at the origin.
  const auto noisy = sample_dataset(singular_missing_data(1.0), 60, 4);
  CHECK(one_point_estimate(noisy, KernelSpec::sobolev_min(), {}, sharp, kMissing, Eigen::VectorXd::Zero(1)) == 0.0);
}

TEST_CASE("IPW examples") {
  const auto pi = Propensity::singular(1.0);  // pi(s) = 1 - s
  const auto d = test::binary_data({0.5, 0.5, 0.75}, {1, 0, 1}, {2.0, 5.0, 1.0});
  CHECK(ipw_estimate(d, pi) == doctest::Approx(8.0 / 3.0).epsilon(1e-15));
  CHECK(truncated_ipw_estimate(d, pi, 0.0) == ipw_estimate(d, pi));

  const auto all = test::binary_data({0.1, 0.2, 0.3}, {1, 1, 1}, {1.0, 2.0, 6.0});
  CHECK(ipw_estimate(all, Propensity::constant(1.0)) == doctest::Approx(3.0));
  CHECK(ipw_estimate(test::binary_data({0.1, 0.2}, {0, 0}, {1.0, 2.0}), pi) == 0.0);

  CHECK_THROWS_AS(ipw_estimate(test::binary_data({1.0}, {1}, {1.0}), pi), DataError);
}

TEST_CASE("truncation drops small propensities") {
  std::vector<double> s(100, 0.2);
  std::vector<int> a(100, 1);
  std::vector<double> y(100, 1.0);
  s[0] = 0.99;  // propensity 0.01
  y[0] = 50.0;
  const auto d = test::binary_data(s, a, y);
  const auto pi = Propensity::singular(1.0);
  CHECK(truncated_ipw_estimate(d, pi, 0.1) == doctest::Approx(99.0 / 0.8 / 100.0));
  CHECK(ipw_estimate(d, pi) == doctest::Approx((99.0 / 0.8 + 50.0 / 0.01) / 100.0));

  const double level = truncation_level({TruncationRule::Kind::kLogQuantile}, Propensity::logistic_cdf(), 1600);
  CHECK(level == doctest::Approx(1.0 / 1601.0).epsilon(1e-12));
  CHECK(truncation_level({TruncationRule::Kind::kInverseRootN}, pi, 400) == doctest::Approx(0.05));
  CHECK(truncation_level({TruncationRule::Kind::kNone}, pi, 400) == 0.0);
  const double root = truncation_level({TruncationRule::Kind::kRootLogQuantile}, Propensity::normal_survival(), 1600);
  CHECK(root == doctest::Approx(normal_survival(std::sqrt(std::log(1600.0)))));
}

TEST_CASE("IPW is unbiased") {
  auto inst = missing_data_instance(StateLaw::kUniform01, Propensity::constant(0.4), Regression::one_plus_cos());
  const double tau = true_functional(inst);
  const int trials = 10000;
  double s = 0.0, s2 = 0.0;
  for (int t = 0; t < trials; ++t) {
    const double e = ipw_estimate(sample_dataset(inst, 50, derive_seed(3, 50, t)), inst.propensity);
    s += e;
    s2 += e * e;
  }
  const double mean = s / trials, sd = std::sqrt(s2 / trials - mean * mean);
  CHECK(std::abs(mean - tau) <= 3.0 * sd / 100.0);
}

TEST_CASE("output truncation respects its ceiling") {
  CHECK(truncate_estimate(10.0, 1.0, 4.0) == 2.0);
  CHECK(truncate_estimate(-10.0, 1.0, 4.0) == -2.0);
  CHECK(truncate_estimate(0.3, 1.0, 4.0) == 0.3);
  Rng rng(2);
  for (int i = 0; i < 100; ++i) {
    const double tau = 10.0 * rng.normal(), r = rng.uniform() + 0.1, k = rng.uniform() + 0.1;
    CHECK(std::abs(truncate_estimate(tau, r, k)) <= r * std::sqrt(k));
  }
}

TEST_CASE("cross-validation examples") {
  const auto d = sample_dataset(singular_missing_data(1.0), 200, 9);
  CHECK(cv_select_ridge(d, kLap, {0.03}, 5, 1) == 0.03);
  const auto grid = default_cv_grid(200);
  CHECK(grid.size() == 20);
  CHECK(grid.front() == doctest::Approx(1e-4 / 200));
  CHECK(grid.back() == doctest::Approx(1e2 / 200));
  CHECK(cv_select_ridge(d, kLap, grid, 5, 4) == cv_select_ridge(d, kLap, grid, 5, 4));

  // Noiseless data in the span of the kernel: least shrinkage predicts best.
  std::vector<double> s(200), y(200);
  std::vector<int> a(200, 1);
  Rng rng(5);
  for (int i = 0; i < 200; ++i) {
    s[i] = rng.uniform();
    y[i] = std::exp(-2.0 * std::abs(s[i] - 0.3)) - 0.5 * std::exp(-2.0 * std::abs(s[i] - 0.8));
  }
  CHECK(cv_select_ridge(test::binary_data(s, a, y), kLap, grid, 5, 4) == grid.front());
}
