// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any fails.
//
//   kpe_acceptance [--out DIR] [--trials N] [--workers N]

#include <Eigen/Dense>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "kpe/errors.hpp"
#include "kpe/estimators.hpp"
#include "kpe/harness.hpp"
#include "kpe/instances.hpp"
#include "kpe/kernels.hpp"
#include "kpe/numerics.hpp"
#include "kpe/theory.hpp"
#include "kpe_cli/commands.hpp"
#include "kpe_cli/config.hpp"

namespace fs = std::filesystem;
using namespace kpe;

namespace {

struct Options {
  std::string out_dir = "acceptance_out";
  int trials = 300;
  int workers = 1;
};

struct Outcome {
  bool pass = true;
  std::string detail;
};

std::string fmt(double v, int digits = 4) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*g", digits, v);
  return buf;
}

const std::vector<Eigen::Index> kGrid = {100, 200, 400, 800, 1600, 3200, 6400, 12800};

EstimatorConfig opt_krr() {
  EstimatorConfig e;
  e.id = "opt_krr";
  e.kind = EstimatorKind::kCrossfitTwoStage;
  e.kernel = KernelSpec::laplacian(2.0);
  e.ridge = OptEmpiricalRidge{0.5};
  return e;
}

EstimatorConfig cv_krr() {
  EstimatorConfig e = opt_krr();
  e.id = "cv_krr";
  e.ridge = CrossValidatedRidge{{}, 5, 17};
  e.cv_pilot_runs = 50;
  return e;
}

EstimatorConfig ipw(bool truncated) {
  EstimatorConfig e;
  e.id = truncated ? "trunc_ipw" : "ipw";
  e.kind = truncated ? EstimatorKind::kTruncatedIpw : EstimatorKind::kIpw;
  return e;
}

ExperimentConfig singular_config(double alpha, const Options& opt) {
  ExperimentConfig cfg;
  cfg.instance = singular_missing_data(alpha);
  cfg.estimators = {opt_krr(), cv_krr(), ipw(false), ipw(true)};
  cfg.n_grid = kGrid;
  cfg.trials = opt.trials;
  cfg.base_seed = 20240501;
  cfg.workers = opt.workers;
  return cfg;
}

struct Run {
  ExperimentConfig config;
  std::vector<TrialRecord> records;
  std::vector<MseCurve> curves;

  const MseCurve& curve(const std::string& id) const {
    for (const auto& c : curves)
      if (c.estimator == id) return c;
    throw InputError("no curve " + id);
  }
  std::vector<const TrialRecord*> at(const std::string& id, std::int64_t n) const {
    std::vector<const TrialRecord*> out;
    for (const auto& r : records)
      if (r.estimator == id && r.n == n) out.push_back(&r);
    return out;
  }
};

Run run_and_save(const ExperimentConfig& cfg, const fs::path& dir) {
  Run run{cfg, run_experiment(cfg), {}};
  run.curves = mse_curves(run.records);
  fs::create_directories(dir);
  persist_results(run.records, (dir / "trials.csv").string(), FileFormat::kCsv);
  persist_curves(run.curves, (dir / "curves.csv").string(), FileFormat::kCsv);
  std::ofstream(dir / "summary.json") << cli::simulation_summary(cfg, run.curves).dump(2) << "\n";
  return run;
}

Outcome slope_in(const Run& run, const std::string& id, double lo, double hi) {
  const auto fit = loglog_slope(run.curve(id));
  Outcome o;
  o.pass = fit.slope >= lo && fit.slope <= hi;
  o.detail = id + " slope " + fmt(fit.slope) + " +- " + fmt(fit.std_error, 2) + ", band [" + fmt(lo) + ", " + fmt(hi) + "]";
  return o;
}

// One-sided exact sign test: P(Bin(m, 1/2) >= wins).
double sign_test_p(int wins, int m) {
  double p = 0.0;
  for (int k = wins; k <= m; ++k) {
    p += std::exp(std::lgamma(m + 1.0) - std::lgamma(k + 1.0) - std::lgamma(m - k + 1.0) - m * std::log(2.0));
  }
  return std::min(1.0, p);
}

Outcome better_than(const Run& run, const std::string& a, const std::string& b, std::int64_t n) {
  const auto ra = run.at(a, n), rb = run.at(b, n);
  double mse_a = 0.0, mse_b = 0.0;
  int wins = 0, decided = 0, used = 0;
  for (size_t t = 0; t < ra.size(); ++t) {
    if (!ra[t]->ok() || !rb[t]->ok()) continue;
    ++used;
    mse_a += ra[t]->sq_error;
    mse_b += rb[t]->sq_error;
    if (ra[t]->sq_error != rb[t]->sq_error) {
      ++decided;
      if (ra[t]->sq_error < rb[t]->sq_error) ++wins;
    }
  }
  mse_a /= used;
  mse_b /= used;
  const double p = sign_test_p(wins, decided);
  Outcome o;
  o.pass = mse_a < mse_b && p < 0.05;
  o.detail = a + " " + fmt(mse_a, 3) + " < " + b + " " + fmt(mse_b, 3) + " (wins " + std::to_string(wins) + "/" +
             std::to_string(decided) + ", p=" + fmt(p, 2) + ")";
  return o;
}

// ---------------------------------------------------------------------------------------------
// Theory properties

struct RandomInstance {
  Eigen::VectorXd u, lambda;
  Eigen::MatrixXd gram;
  double radius;
};

RandomInstance random_instance(std::mt19937_64& gen) {
  std::uniform_int_distribution<int> dim(1, 12);
  std::normal_distribution<double> z;
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  const int J = dim(gen);
  RandomInstance r;
  r.u.resize(J);
  r.lambda.resize(J);
  Eigen::MatrixXd a(J, J);
  for (int j = 0; j < J; ++j) {
    r.u[j] = z(gen);
    r.lambda[j] = std::pow(j + 1.0, -1.0 - 2.0 * unif(gen));
    for (int k = 0; k < J; ++k) a(j, k) = z(gen);
  }
  std::sort(r.lambda.data(), r.lambda.data() + J, std::greater<>());
  r.gram = a * a.transpose() / J + 0.05 * Eigen::MatrixXd::Identity(J, J);
  r.radius = 0.5 + 1.5 * unif(gen);
  return r;
}

Outcome criterion6() {
  std::vector<std::string> failures;
  std::mt19937_64 gen(6);
  const std::vector<double> ns = {1.0, 1e2, 1e4, 1e6};

  // Prop. 1 sandwich.
  double worst_hi = 0.0, worst_lo = 1e300;
  for (int i = 0; i < 100; ++i) {
    const auto r = random_instance(gen);
    const double n = ns[i % ns.size()];
    const double q = variance_functional(r.u, r.gram, r.lambda, r.radius, n);
    const double w = variance_functional_lower_witness(r.u, r.gram, r.lambda, r.radius, n, 10000, 100 + i);
    worst_hi = std::max(worst_hi, w * w / q);
    worst_lo = std::min(worst_lo, w * w / q);
  }
  if (worst_hi > 4.0 || worst_lo < 1.0 / 8.0) failures.push_back("sandwich");

  // Monotonicity in n.
  int nonmonotone = 0;
  for (int i = 0; i < 50; ++i) {
    const auto r = random_instance(gen);
    double prev = 0.0;
    for (double n : {1e2, 1e4, 1e6}) {
      const double q = variance_functional(r.u, r.gram, r.lambda, r.radius, n);
      if (q < prev * (1.0 - 1e-12)) ++nonmonotone;
      prev = q;
    }
  }
  if (nonmonotone) failures.push_back("monotonicity");

  // Homoskedastic ceiling sigma_bar^2 * sum u_j^2.
  int above = 0;
  for (int i = 0; i < 50; ++i) {
    auto r = random_instance(gen);
    const double sigma_bar = 0.5 + i * 0.05;
    const Eigen::MatrixXd g = Eigen::MatrixXd::Identity(r.u.size(), r.u.size()) / (sigma_bar * sigma_bar);
    for (double n : {1.0, 1e3, 1e9}) {
      if (variance_functional(r.u, g, r.lambda, r.radius, n) > sigma_bar * sigma_bar * r.u.squaredNorm() * (1 + 1e-12)) ++above;
    }
  }
  if (above) failures.push_back("ceiling");

  // Prop. 2: pi = 1/2, uniform states, unit noise; Gamma is the identity by orthonormality.
  const auto inst = missing_data_instance(StateLaw::kUniform01, Propensity::constant(0.5), Regression::constant(1.0));
  const auto eig = analytic_eigensystem(SobolevUniformFamily{0.5}, 2000);
  const auto u = feature_mean_vector(eig, inst, AverageTarget{});
  const Eigen::MatrixXd identity = Eigen::MatrixXd::Identity(eig.truncation(), eig.truncation());
  const double v12 = variance_functional(u.entries, identity, eig.eigenvalues(), 1.0, 1e12);
  if (std::abs(v12 - 2.0) > 0.2) failures.push_back("prop2");

  // Effective dimension under exponential decay, |phi| <= sqrt(2).
  const int J = 80;
  Eigen::VectorXd lam(J);
  for (int j = 0; j < J; ++j) lam[j] = std::exp(-(j + 1.0));
  Eigen::MatrixXd rows(256, J);
  for (int g = 0; g < 256; ++g)
    for (int j = 0; j < J; ++j) rows(g, j) = std::sqrt(2.0) * std::cos(2.0 * M_PI * (j + 1) * (g + 0.5) / 256.0);
  double max_ratio = 0.0, prev_d = 1e300;
  bool d_monotone = true;
  for (double rho : {1e-2, 1e-3, 1e-4, 1e-5, 1e-6, 1e-7, 1e-8}) {
    const double d = effective_dimension(lam, rows, rho);
    max_ratio = std::max(max_ratio, d / std::log(1.0 / rho));
    if (d > J + 1e-9) d_monotone = false;
    prev_d = d;
  }
  (void)prev_d;
  if (max_ratio > 4.0 || !d_monotone) failures.push_back("effdim");

  // Rate table.
  struct Case {
    RateQuery q;
    double exponent;
    int log_power;
    bool zero;
  };
  const std::vector<Case> table = {
      {SingularRateQuery{0.0, std::nullopt}, -1.0, 0, false},
      {SingularRateQuery{0.5, std::nullopt}, -1.0, 0, false},
      {SingularRateQuery{0.99, std::nullopt}, -1.0, 0, false},
      {SingularRateQuery{1.0, std::nullopt}, -1.0, 1, false},
      {SingularRateQuery{2.0, std::nullopt}, -0.75, 0, false},
      {SingularRateQuery{3.0, std::nullopt}, -0.6, 0, false},
      {SingularRateQuery{4.0, std::nullopt}, -0.5, 0, false},
      {SingularRateQuery{2.0, 0.0}, 0.0, 0, true},
      {SingularRateQuery{2.0, 0.5}, -0.5, 0, false},
      {SingularRateQuery{2.0, 1.0}, -0.25, 0, false},
      {SingularRateQuery{0.5, 1.0}, -0.4, 0, false},
      {ContinuumRateQuery{1, 1, 2.0, false}, -0.75, 0, false},
      {ContinuumRateQuery{1, 1, 2.0, true}, -0.5, 0, false},
      {ContinuumRateQuery{2, 1, 3.0, true}, -0.5, 0, false},
  };
  int table_bad = 0;
  for (const auto& c : table) {
    const auto r = minimax_rate(c.q);
    if (std::abs(r.exponent - c.exponent) > 1e-15 || r.log_power != c.log_power || r.zero_risk != c.zero) ++table_bad;
  }
  for (double a : {0.0, 0.5, 0.9, 1.0, 1.5, 2.0, 3.0}) {
    const bool finite = !semiparametric_bound(singular_missing_data(a)).infinite;
    const auto r = minimax_rate(SingularRateQuery{a, std::nullopt});
    if (finite != (r.exponent == -1.0 && r.log_power == 0)) ++table_bad;
  }
  if (table_bad) failures.push_back("rates");

  Outcome o;
  o.pass = failures.empty();
  o.detail = "witness^2/Q in [" + fmt(worst_lo, 3) + ", " + fmt(worst_hi, 3) + "], nonmonotone " +
             std::to_string(nonmonotone) + ", above ceiling " + std::to_string(above) + ", Q(1e12) " + fmt(v12, 5) +
             ", max D/log(1/rho) " + fmt(max_ratio, 3) + ", rate mismatches " + std::to_string(table_bad);
  for (const auto& f : failures) o.detail += " [failed: " + f + "]";
  return o;
}

// ---------------------------------------------------------------------------------------------
// Oracle equivalences

double rel_diff(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  return (a - b).lpNorm<Eigen::Infinity>() / std::max(1.0, b.lpNorm<Eigen::Infinity>());
}

Outcome criterion7() {
  std::vector<std::string> failures;
  double worst_krr = 0.0, worst_weighted = 0.0;
  const auto inst = singular_missing_data(0.5);
  for (int n = 2; n <= 10; ++n) {
    const auto data = sample_dataset(inst, n, 700 + n);
    for (const auto& kernel : {KernelSpec::laplacian(2.0), KernelSpec::sobolev_min()}) {
      const double ridge = 0.3 / n;
      const auto pts = data.points();
      Eigen::MatrixXd k(n, n);
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) k(i, j) = kernel_eval(kernel, pts[i], pts[j]);
      const Eigen::MatrixXd inv = (k + n * ridge * Eigen::MatrixXd::Identity(n, n)).fullPivLu().inverse();
      const Eigen::VectorXd direct = inv * data.outcomes;
      for (auto path : {SolvePath::kDense, SolvePath::kStructured}) {
        const auto model = krr_fit(data, kernel, ridge, std::nullopt, path);
        worst_krr = std::max(worst_krr, rel_diff(model.dual_coefficients, direct));
      }
      for (double c : {0.5, 3.0}) {
        const Eigen::VectorXd w = Eigen::VectorXd::Constant(n, c);
        for (auto path : {SolvePath::kDense, SolvePath::kStructured}) {
          const auto weighted = krr_fit(data, kernel, ridge, w, path);
          const auto plain = krr_fit(data, kernel, ridge / c, std::nullopt, path);
          worst_weighted = std::max(worst_weighted, rel_diff(weighted.dual_coefficients, plain.dual_coefficients));
        }
      }
    }
  }
  if (worst_krr > 1e-8) failures.push_back("krr");
  if (worst_weighted > 1e-8) failures.push_back("weighted");

  // Pipeline composition at n = 8.
  const auto data = sample_dataset(inst, 8, 88);
  const auto kernel = KernelSpec::laplacian(2.0);
  const auto fit = data.slice(0, 4), eval = data.slice(4, 8);
  const double staged = functional_average(krr_fit(fit, kernel, 0.5 / 4), eval.states, inst.omega);
  const double two = two_stage_estimate(data, kernel, OptEmpiricalRidge{0.5}, inst.omega);
  const double swapped = two_stage_on(eval, fit, kernel, OptEmpiricalRidge{0.5}, inst.omega);
  const double cross = crossfit_two_stage(data, kernel, OptEmpiricalRidge{0.5}, inst.omega);
  if (staged != two || cross != 0.5 * (two + swapped)) failures.push_back("pipeline");

  // IPW hand fixtures under pi = 1/2 and a half-threshold truncation.
  Dataset hand;
  hand.states = (Eigen::MatrixXd(4, 1) << 0.1, 0.4, 0.6, 0.9).finished();
  hand.labels = {1, 0, 1, 1};
  hand.actions.resize(4, 0);
  hand.outcomes = (Eigen::VectorXd(4) << 1.0, 0.0, 3.0, 0.5).finished();
  const double ipw_half = ipw_estimate(hand, Propensity::constant(0.5));
  const double ipw_sing = ipw_estimate(hand, Propensity::singular(1.0));
  const double trunc_sing = truncated_ipw_estimate(hand, Propensity::singular(1.0), 0.3);
  // (1/0.5 + 3/0.5 + 0.5/0.5) / 4 = 9 / 4; singular pi = 1 - s: 1/0.9, 3/0.4, 0.5/0.1 (dropped below 0.3).
  const double expect_sing = (1.0 / 0.9 + 3.0 / 0.4 + 0.5 / (1.0 - 0.9)) / 4.0;
  const double expect_trunc = (1.0 / 0.9 + 3.0 / 0.4) / 4.0;
  if (ipw_half != 2.25 || ipw_sing != expect_sing || trunc_sing != expect_trunc) failures.push_back("ipw");

  // OLS slope against the normal equations.
  MseCurve curve{"synthetic", {}};
  const std::vector<std::pair<std::int64_t, double>> pts = {{100, 0.0123}, {400, 0.0041}, {1600, 0.00077}};
  for (const auto& [n, m] : pts) curve.points.push_back({n, 10, m, 0.0, 0});
  Eigen::MatrixXd x(3, 2);
  Eigen::VectorXd y(3);
  for (int i = 0; i < 3; ++i) {
    x(i, 0) = 1.0;
    x(i, 1) = std::log(static_cast<double>(pts[i].first));
    y[i] = std::log(pts[i].second);
  }
  const Eigen::Vector2d beta = (x.transpose() * x).ldlt().solve(x.transpose() * y);
  const auto ols = loglog_slope(curve);
  const double slope_err = std::abs(ols.slope - beta[1]);
  if (slope_err > 1e-12 || std::abs(ols.intercept - beta[0]) > 1e-12) failures.push_back("ols");

  Outcome o;
  o.pass = failures.empty();
  o.detail = "krr rel err " + fmt(worst_krr, 2) + ", weighted rel err " + fmt(worst_weighted, 2) +
             ", pipeline exact " + (staged == two && cross == 0.5 * (two + swapped) ? "yes" : "no") + ", ipw exact " +
             (ipw_half == 2.25 && ipw_sing == expect_sing && trunc_sing == expect_trunc ? "yes" : "no") +
             ", ols slope err " + fmt(slope_err, 2);
  for (const auto& f : failures) o.detail += " [failed: " + f + "]";
  return o;
}

std::string read_all(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

int main(int argc, char** argv) {
  Options opt;
  for (int i = 1; i + 1 < argc; i += 2) {
    const std::string key = argv[i];
    if (key == "--out") {
      opt.out_dir = argv[i + 1];
    } else if (key == "--trials") {
      opt.trials = std::stoi(argv[i + 1]);
    } else if (key == "--workers") {
      opt.workers = std::stoi(argv[i + 1]);
    } else {
      std::cerr << "unknown option " << key << "\n";
      return 2;
    }
  }
  const fs::path out(opt.out_dir);
  const auto start = std::chrono::steady_clock::now();
  std::map<int, Outcome> results;
  auto report = [&](int k, const Outcome& o) {
    results[k] = o;
    std::cout << "criterion " << k << ": " << (o.pass ? "PASS" : "FAIL") << "  " << o.detail << std::endl;
  };

  std::map<double, Run> runs;
  for (double alpha : {0.5, 1.0, 2.0, 3.0}) {
    runs.emplace(alpha, run_and_save(singular_config(alpha, opt), out / ("singular_alpha_" + fmt(alpha))));
  }

  report(1, slope_in(runs.at(0.5), "opt_krr", -1.12, -0.88));
  {
    Outcome o = slope_in(runs.at(2.0), "opt_krr", -0.88, -0.62);
    cli::SlopeOptions so{(out / "singular_alpha_2" / "curves.csv").string(), -0.75, 0.1, "opt_krr"};
    std::ostringstream sink, err;
    const int code = cli::cmd_slope(so, sink, err);
    o.detail += "; slope command vs -3/4 tol 0.1 exit " + std::to_string(code);
    report(2, o);
  }
  report(3, slope_in(runs.at(3.0), "opt_krr", -0.6 - 0.12, -0.6 + 0.12));
  {
    Outcome o;
    std::string detail;
    for (double alpha : {2.0, 3.0}) {
      const auto& run = runs.at(alpha);
      for (const auto& [a, b] : std::vector<std::pair<std::string, std::string>>{
               {"opt_krr", "trunc_ipw"}, {"trunc_ipw", "ipw"}, {"opt_krr", "cv_krr"}}) {
        const auto c = better_than(run, a, b, 12800);
        o.pass = o.pass && c.pass;
        detail += (detail.empty() ? "" : "; ") + std::string("alpha ") + fmt(alpha) + ": " + c.detail +
                  (c.pass ? "" : " FAIL");
      }
    }
    o.detail = detail;
    report(4, o);
  }
  {
    ExperimentConfig cfg;
    cfg.instance = heavy_tail_study(StateLaw::kStdNormal, Propensity::Kind::kLogisticCdf);
    cfg.estimators = {ipw(false), ipw(true)};
    cfg.n_grid = {50, 100, 200, 400, 800, 1600, 3200, 6400, 12800};
    cfg.trials = opt.trials;
    cfg.base_seed = 11;
    cfg.workers = opt.workers;
    const auto run = run_and_save(cfg, out / "heavy_tail_normal_logistic");
    Outcome o;
    double worst = 0.0;
    const auto& a = run.curve("ipw");
    const auto& b = run.curve("trunc_ipw");
    for (size_t i = 0; i < a.points.size(); ++i) {
      worst = std::max(worst, std::abs(b.points[i].mse - a.points[i].mse) / a.points[i].mse);
    }
    o.pass = worst <= 0.10;
    o.detail = "max relative MSE gap ipw vs trunc_ipw " + fmt(worst, 3) + " over n in [50, 12800] (limit 0.1)";
    report(5, o);
  }
  report(6, criterion6());
  report(7, criterion7());
  {
    ExperimentConfig a = singular_config(0.5, opt);
    ExperimentConfig b = a;
    a.workers = 1;
    b.workers = 4;
    run_and_save(a, out / "repro_workers_1");
    run_and_save(b, out / "repro_workers_4");
    const auto fa = read_all(out / "repro_workers_1" / "trials.csv");
    const auto fb = read_all(out / "repro_workers_4" / "trials.csv");
    const auto f0 = read_all(out / "singular_alpha_0.5" / "trials.csv");
    Outcome o;
    o.pass = !fa.empty() && fa == fb && fa == f0;
    o.detail = "trials.csv " + std::to_string(fa.size()) + " bytes, workers 1 vs 4 " + (fa == fb ? "identical" : "differ") +
               ", rerun vs first run " + (fa == f0 ? "identical" : "differ");
    report(8, o);
  }

  const auto fit1 = loglog_slope(runs.at(1.0).curve("opt_krr"));
  std::cout << "report (no gate): alpha 1 opt_krr slope " << fmt(fit1.slope) << " +- " << fmt(fit1.std_error, 2)
            << ", theory n^-1 log n" << std::endl;
  for (double alpha : {0.5, 1.0, 2.0, 3.0}) {
    std::cout << "report (no gate): alpha " << fmt(alpha) << " slopes";
    for (const auto& c : runs.at(alpha).curves) {
      std::cout << "  " << c.estimator << " " << fmt(loglog_slope(c).slope);
    }
    std::cout << std::endl;
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  int failed = 0;
  for (const auto& [k, o] : results) failed += !o.pass;
  std::cout << "acceptance: " << (8 - failed) << "/8 passed in " << fmt(secs, 3) << " s" << std::endl;
  return failed ? 1 : 0;
}
