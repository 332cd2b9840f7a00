#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>

#include "fixtures.hpp"
#include "kpe/errors.hpp"
#include "kpe/harness.hpp"

using namespace kpe;

namespace {

std::filesystem::path scratch(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / "kpe_harness_tests";
  std::filesystem::create_directories(dir);
  return dir / name;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

EstimatorConfig regression(const std::string& id) {
  EstimatorConfig e;
  e.id = id;
  e.kind = EstimatorKind::kCrossfitTwoStage;
  e.kernel = KernelSpec::laplacian(2.0);
  return e;
}

EstimatorConfig ipw(const std::string& id, bool truncated = false) {
  EstimatorConfig e;
  e.id = id;
  e.kind = truncated ? EstimatorKind::kTruncatedIpw : EstimatorKind::kIpw;
  return e;
}

ExperimentConfig small_experiment() {
  ExperimentConfig c;
  c.instance = singular_missing_data(2.0);
  c.estimators = {regression("krr"), ipw("ipw"), ipw("trunc", true)};
  c.n_grid = {50, 100, 200};
  c.trials = 6;
  c.base_seed = 11;
  return c;
}

MseCurve power_curve(double c, double exponent) {
  MseCurve curve{"fit", {}};
  for (std::int64_t n : {100, 200, 400, 800, 1600}) curve.points.push_back({n, 10, c * std::pow(n, exponent), 0.0, 0});
  return curve;
}

TrialRecord record(const std::string& id, std::int64_t n, std::int64_t t, double estimate, double tau) {
  TrialRecord r;
  r.estimator = id;
  r.n = n;
  r.trial = t;
  r.seed = derive_seed(1, n, t);
  r.estimate = estimate;
  r.tau_star = tau;
  r.sq_error = (estimate - tau) * (estimate - tau);
  return r;
}

}  // namespace

TEST_CASE("single-trial run yields one record") {
  ExperimentConfig c;
  c.instance = singular_missing_data(0.5);
  c.estimators = {ipw("ipw")};
  c.n_grid = {100};
  c.trials = 1;
  const auto recs = run_experiment(c);
  REQUIRE(recs.size() == 1);
  CHECK(recs[0].ok());
  CHECK(recs[0].seed == derive_seed(0, 100, 0));
  CHECK(recs[0].tau_star == doctest::Approx(1.0 + std::sin(1.0)));
}

TEST_CASE("worker count does not change records") {
  auto c = small_experiment();
  const auto one = run_experiment(c);
  c.workers = 8;
  const auto many = run_experiment(c);
  CHECK(one == many);
  CHECK(trials_csv(one) == trials_csv(many));
}

TEST_CASE("records share seeds within a cell and survive estimator removal") {
  const auto c = small_experiment();
  const auto all = run_experiment(c);
  std::map<std::pair<std::int64_t, std::int64_t>, std::uint64_t> seeds;
  for (const auto& r : all) {
    const auto [it, fresh] = seeds.emplace(std::make_pair(r.n, r.trial), r.seed);
    CHECK(it->second == r.seed);
  }

  auto reduced = c;
  reduced.estimators.erase(reduced.estimators.begin());
  const auto rest = run_experiment(reduced);
  std::vector<TrialRecord> expected;
  for (const auto& r : all) {
    if (r.estimator != "krr") expected.push_back(r);
  }
  CHECK(rest == expected);
}

TEST_CASE("IPW mean squared error matches its variance") {
  ExperimentConfig c;
  c.instance = missing_data_instance(StateLaw::kUniform01, Propensity::constant(0.5), Regression::one_plus_cos());
  c.estimators = {ipw("ipw")};
  c.n_grid = {1000};
  c.trials = 2000;
  c.base_seed = 3;
  const auto curve = mse_curve(run_experiment(c), 1.0 + std::sin(1.0));
  // Y A / pi has second moment E[mu^2 + sigma^2] / pi.
  const double second = (1.0 + 2.0 * std::sin(1.0) + 0.5 + std::sin(2.0) / 4.0 + 1.0) / 0.5;
  const double variance = second - std::pow(1.0 + std::sin(1.0), 2);
  CHECK(std::abs(curve.points[0].mse / (variance / 1000.0) - 1.0) <= 0.2);
}

TEST_CASE("mse_curve examples") {
  std::vector<TrialRecord> exact = {record("a", 10, 0, 2.0, 2.0), record("a", 10, 1, 2.0, 2.0)};
  CHECK(mse_curve(exact, 2.0).points[0].mse == 0.0);

  std::vector<TrialRecord> pm = {record("a", 10, 0, 3.0, 2.0), record("a", 10, 1, 1.0, 2.0)};
  const auto p = mse_curve(pm, 2.0).points[0];
  CHECK(p.mse == 1.0);
  CHECK(p.std_error == 0.0);

  // Squared errors 1, 4, 9, 16: mean 7.5, sample variance 129 / 3.
  std::vector<TrialRecord> four;
  for (int k = 1; k <= 4; ++k) four.push_back(record("a", 20, k, 2.0 + k, 2.0));
  auto bad = record("a", 20, 9, NAN, 2.0);
  four.push_back(bad);
  auto failed = record("a", 20, 10, 0.0, 2.0);
  failed.status = "numerical_error";
  four.push_back(failed);
  const auto q = mse_curve(four, 2.0).points[0];
  CHECK(q.mse == doctest::Approx(7.5));
  CHECK(q.std_error == doctest::Approx(std::sqrt(43.0) / 2.0));
  CHECK(q.trials == 4);
  CHECK(q.excluded == 2);

  pm.push_back(record("b", 10, 0, 1.0, 2.0));
  CHECK_THROWS_AS(mse_curve(pm, 2.0), InputError);
}

TEST_CASE("log-log slope examples") {
  const auto inv = loglog_slope(power_curve(3.0, -1.0));
  CHECK(inv.slope == doctest::Approx(-1.0).epsilon(1e-12));
  CHECK(inv.std_error == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(inv.intercept == doctest::Approx(std::log(3.0)).epsilon(1e-12));
  CHECK(loglog_slope(power_curve(0.7, -0.75)).slope == doctest::Approx(-0.75).epsilon(1e-12));

  MseCurve noisy{"n", {{100, 5, 0.011, 0, 0}, {400, 5, 0.0021, 0, 0}, {1600, 5, 0.00075, 0, 0}}};
  Eigen::MatrixXd x(3, 2);
  Eigen::VectorXd y(3);
  for (int i = 0; i < 3; ++i) {
    x(i, 0) = 1.0;
    x(i, 1) = std::log(static_cast<double>(noisy.points[i].n));
    y[i] = std::log(noisy.points[i].mse);
  }
  const Eigen::VectorXd beta = (x.transpose() * x).ldlt().solve(x.transpose() * y);
  const auto fit = loglog_slope(noisy);
  CHECK(std::abs(fit.slope - beta[1]) <= 1e-12);
  CHECK(std::abs(fit.intercept - beta[0]) <= 1e-11);
  const Eigen::VectorXd resid = y - x * beta;
  // Residual variance on 3 - 2 degrees of freedom.
  const double se = std::sqrt(resid.squaredNorm() * (x.transpose() * x).inverse()(1, 1));
  CHECK(fit.std_error == doctest::Approx(se).epsilon(1e-10));

  MseCurve single{"s", {{100, 5, 0.01, 0, 0}}};
  CHECK_THROWS_AS(loglog_slope(single), InputError);
  MseCurve zero{"z", {{100, 5, 0.0, 0, 0}, {200, 5, 0.01, 0, 0}}};
  CHECK_THROWS_AS(loglog_slope(zero), InputError);
}

TEST_CASE("number formatting round-trips") {
  for (double v : {0.0, -0.0, 1.0, 0.1, 1.0 / 3.0, 6.02214076e23, 5e-324, -1.7976931348623157e308}) {
    CHECK(parse_double(format_double(v)) == v);
  }
  CHECK(format_double(INFINITY) == "inf");
  CHECK(std::isnan(parse_double(format_double(NAN))));
  CHECK_THROWS_AS(parse_double("1.5x"), IoError);
}

TEST_CASE("result files round-trip") {
  const auto recs = run_experiment(small_experiment());
  const auto curves = mse_curves(recs);
  for (auto fmt : {FileFormat::kCsv, FileFormat::kJson}) {
    const std::string ext = fmt == FileFormat::kCsv ? ".csv" : ".json";
    const auto tp = scratch("trials" + ext), cp = scratch("curves" + ext);
    persist_results(recs, tp.string(), fmt, nlohmann::json{{"note", "echo"}});
    persist_curves(curves, cp.string(), fmt);
    CHECK(load_results(tp.string()) == recs);
    CHECK(load_curves(cp.string()) == curves);
  }
  CHECK(nlohmann::json::parse(slurp(scratch("trials.json")))["config"]["note"] == "echo");
}

TEST_CASE("empty record list writes only the header") {
  const auto p = scratch("empty.csv");
  persist_results({}, p.string(), FileFormat::kCsv);
  CHECK(slurp(p) == "estimator,n,trial,seed,estimate,tau_star,sq_error,status,wall_ms\n");
  CHECK(load_results(p.string()).empty());
  CHECK(curves_csv({}) == "estimator,n,trials,mse,stderr,excluded\n");
}

TEST_CASE("mixed-estimator files partition by id") {
  std::vector<TrialRecord> recs;
  for (int t = 0; t < 3; ++t) {
    recs.push_back(record("alpha", 100, t, 1.0 + 0.1 * t, 1.0));
    recs.push_back(record("beta", 100, t, 2.0 - 0.2 * t, 2.0));
  }
  const auto p = scratch("mixed.csv");
  persist_results(recs, p.string(), FileFormat::kCsv);
  const auto curves = mse_curves(load_results(p.string()));
  REQUIRE(curves.size() == 2);
  CHECK(curves[0].estimator == "alpha");
  CHECK(curves[0].points[0].mse == doctest::Approx((0.0 + 0.01 + 0.04) / 3.0));
  CHECK(curves[1].estimator == "beta");
  CHECK(curves[1].points[0].mse == doctest::Approx((0.0 + 0.04 + 0.16) / 3.0));
}

TEST_CASE("malformed result files name the line and field") {
  const auto p = scratch("broken.csv");
  std::ofstream(p) << "estimator,n,trial,seed,estimate,tau_star,sq_error,status,wall_ms\n"
                   << "a,100,0,1,0.5,1,0.25,ok,0\n"
                   << "a,100,1,1,oops,1,0.25,ok,0\n";
  try {
    load_results(p.string());
    FAIL("expected an error");
  } catch (const IoError& e) {
    const std::string what = e.what();
    CHECK(what.find(":3:") != std::string::npos);
    CHECK(what.find("estimate") != std::string::npos);
  }
  CHECK_THROWS_AS(load_results(scratch("missing.csv").string()), IoError);
}

TEST_CASE("validation lists every problem") {
  auto c = small_experiment();
  c.n_grid = {100, 50};
  c.trials = 0;
  c.estimators.push_back(ipw("ipw"));
  c.estimators[0].kernel.reset();
  try {
    validate(c);
    FAIL("expected a config error");
  } catch (const ConfigError& e) {
    CHECK(e.fields().size() >= 4);
  }
  CHECK_NOTHROW(validate(small_experiment()));
  CHECK(estimator_kind_from_string(to_string(EstimatorKind::kFourStage)) == EstimatorKind::kFourStage);
}

TEST_CASE("parallel_for visits every index once and rethrows") {
  std::vector<int> hits(1000, 0);
  parallel_for(hits.size(), 4, [&](std::size_t i) { hits[i] += 1; });
  for (int h : hits) CHECK(h == 1);
  CHECK_THROWS_AS(parallel_for(10, 3, [](std::size_t i) { if (i == 7) throw DataError("boom"); }), DataError);
}
