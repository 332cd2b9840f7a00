#include "kpe/harness.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <chrono>
#include <cmath>
#include <fstream>
#include <map>
#include <mutex>
#include <sstream>
#include <thread>

#include "kpe/errors.hpp"
#include "kpe/numerics.hpp"

namespace kpe {

std::string to_string(EstimatorKind kind) {
  switch (kind) {
    case EstimatorKind::kTwoStage: return "two_stage";
    case EstimatorKind::kCrossfitTwoStage: return "crossfit_two_stage";
    case EstimatorKind::kFourStage: return "four_stage";
    case EstimatorKind::kOnePoint: return "one_point";
    case EstimatorKind::kIpw: return "ipw";
    case EstimatorKind::kTruncatedIpw: return "truncated_ipw";
  }
  return "unknown";
}

EstimatorKind estimator_kind_from_string(const std::string& name) {
  for (auto k : {EstimatorKind::kTwoStage, EstimatorKind::kCrossfitTwoStage, EstimatorKind::kFourStage,
                 EstimatorKind::kOnePoint, EstimatorKind::kIpw, EstimatorKind::kTruncatedIpw}) {
    if (to_string(k) == name) return k;
  }
  throw InputError("unknown estimator kind '" + name + "'");
}

namespace {

bool uses_regression(EstimatorKind k) { return k != EstimatorKind::kIpw && k != EstimatorKind::kTruncatedIpw; }

Eigen::Index minimum_size(EstimatorKind k) {
  switch (k) {
    case EstimatorKind::kTwoStage:
    case EstimatorKind::kCrossfitTwoStage: return 4;
    case EstimatorKind::kFourStage: return 8;
    case EstimatorKind::kOnePoint: return 6;
    default: return 1;
  }
}

bool valid_id(const std::string& id) {
  return !id.empty() && std::all_of(id.begin(), id.end(), [](char c) {
    return std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '-' || c == '.';
  });
}

std::string error_tag(const std::exception_ptr& ep) {
  try {
    std::rethrow_exception(ep);
  } catch (const DataError&) {
    return "data_error";
  } catch (const NumericalError&) {
    return "numerical_error";
  } catch (const InputError&) {
    return "input_error";
  } catch (const DegeneracyError&) {
    return "degeneracy_error";
  } catch (...) {
    return "error";
  }
}

double run_estimator(const ExperimentConfig& cfg, const EstimatorConfig& e, const Dataset& d,
                     const std::optional<double>& fixed_ridge) {
  const ProblemInstance& inst = cfg.instance;
  const RegularizationPolicy policy = fixed_ridge ? RegularizationPolicy{FixedRidge{*fixed_ridge}} : e.ridge;
  double tau = 0.0;
  switch (e.kind) {
    case EstimatorKind::kTwoStage: tau = two_stage_estimate(d, *e.kernel, policy, inst.omega); break;
    case EstimatorKind::kCrossfitTwoStage: tau = crossfit_two_stage(d, *e.kernel, policy, inst.omega); break;
    case EstimatorKind::kFourStage: tau = four_stage_estimate(d, *e.kernel, e.condvar, e.params, inst.omega); break;
    case EstimatorKind::kOnePoint:
      tau = one_point_estimate(d, *e.kernel, e.condvar, e.params, inst.omega, *e.x0);
      break;
    case EstimatorKind::kIpw: tau = ipw_estimate(d, inst.propensity); break;
    case EstimatorKind::kTruncatedIpw: {
      const TruncationRule rule = e.truncation.value_or(default_truncation_rule(inst));
      tau = truncated_ipw_estimate(d, inst.propensity, truncation_level(rule, inst.propensity, d.size()));
      break;
    }
  }
  if (e.truncate_output) {
    const double kappa = e.kernel ? std::sqrt(e.kernel->kappa_squared()) : 1.0;
    tau = truncate_estimate(tau, inst.rkhs_radius, kappa);
  }
  return tau;
}

bool pilot_applies(const EstimatorConfig& e) {
  return std::holds_alternative<CrossValidatedRidge>(e.ridge) && e.cv_pilot_runs > 0 &&
         (e.kind == EstimatorKind::kTwoStage || e.kind == EstimatorKind::kCrossfitTwoStage);
}

double pilot_cv_run(const ExperimentConfig& cfg, const EstimatorConfig& e, Eigen::Index n, int t) {
  const auto& cv = std::get<CrossValidatedRidge>(e.ridge);
  const Dataset d = sample_dataset(cfg.instance, n, derive_seed(cfg.base_seed, n, t));
  const Dataset fold = d.slice(0, n / 2);
  const auto grid = cv.grid.empty() ? default_cv_grid(fold.size()) : cv.grid;
  return cv_select_ridge(fold, *e.kernel, grid, cv.folds, derive_seed(cv.seed, n, t));
}

}  // namespace

void validate(const ExperimentConfig& cfg) {
  std::vector<std::string> errors;
  if (cfg.n_grid.empty()) errors.push_back("n_grid: must be nonempty");
  for (size_t i = 0; i < cfg.n_grid.size(); ++i) {
    if (cfg.n_grid[i] < 1) errors.push_back("n_grid[" + std::to_string(i) + "]: must be positive");
    if (i > 0 && cfg.n_grid[i] <= cfg.n_grid[i - 1]) {
      errors.push_back("n_grid[" + std::to_string(i) + "]: must be strictly increasing");
    }
  }
  if (cfg.trials < 1) errors.push_back("trials: must be >= 1");
  if (cfg.workers < 1) errors.push_back("workers: must be >= 1");
  if (cfg.estimators.empty()) errors.push_back("estimators: must be nonempty");
  std::vector<std::string> seen;
  for (size_t k = 0; k < cfg.estimators.size(); ++k) {
    const auto& e = cfg.estimators[k];
    const std::string where = "estimators[" + std::to_string(k) + "]";
    if (!valid_id(e.id)) errors.push_back(where + ".id: must match [A-Za-z0-9_.-]+");
    if (std::find(seen.begin(), seen.end(), e.id) != seen.end()) errors.push_back(where + ".id: duplicate id");
    seen.push_back(e.id);
    if (uses_regression(e.kind) && !e.kernel) errors.push_back(where + ".kernel: required for " + to_string(e.kind));
    if (!uses_regression(e.kind) && (!cfg.instance.binary_actions() || cfg.instance.state_dim != 1)) {
      errors.push_back(where + ".kind: IPW needs scalar states and binary actions");
    }
    if (e.kind == EstimatorKind::kOnePoint) {
      if (!e.x0) {
        errors.push_back(where + ".x0: required for one_point");
      } else if (e.x0->size() != cfg.instance.state_dim) {
        errors.push_back(where + ".x0: dimension must equal the state dimension");
      }
    }
    if (!cfg.n_grid.empty() && cfg.n_grid.front() < minimum_size(e.kind)) {
      errors.push_back(where + ".kind: " + to_string(e.kind) + " needs n >= " +
                       std::to_string(minimum_size(e.kind)));
    }
  }
  if (!errors.empty()) throw ConfigError(errors);
}

double target_for(const ExperimentConfig& cfg, const EstimatorConfig& e) {
  if (e.kind == EstimatorKind::kOnePoint) return true_one_point(cfg.instance, *e.x0);
  if (cfg.tau_star) return *cfg.tau_star;
  if (auto v = analytic_functional(cfg.instance)) return *v;
  return true_functional(cfg.instance);
}

double pilot_ridge(const ExperimentConfig& cfg, const EstimatorConfig& e, Eigen::Index n) {
  if (!pilot_applies(e)) throw InputError("estimator does not use a pilot ridge");
  const int runs = std::min(e.cv_pilot_runs, cfg.trials);
  double log_sum = 0.0;
  for (int t = 0; t < runs; ++t) log_sum += std::log(pilot_cv_run(cfg, e, n, t));
  return std::exp(log_sum / runs);
}

void parallel_for(std::size_t count, int workers, const std::function<void(std::size_t)>& fn) {
  const auto threads = static_cast<std::size_t>(std::max(1, workers));
  if (threads == 1 || count <= 1) {
    for (std::size_t i = 0; i < count; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  auto work = [&] {
    for (std::size_t i = next++; i < count; i = next++) {
      try {
        fn(i);
      } catch (...) {
        std::lock_guard lock(failure_mutex);
        if (!failure) failure = std::current_exception();
      }
    }
  };
  std::vector<std::thread> pool;
  for (std::size_t k = 0; k < std::min(threads, count); ++k) pool.emplace_back(work);
  for (auto& th : pool) th.join();
  if (failure) std::rethrow_exception(failure);
}

std::vector<TrialRecord> run_experiment(const ExperimentConfig& cfg) {
  validate(cfg);
  const size_t E = cfg.estimators.size(), N = cfg.n_grid.size(), T = static_cast<size_t>(cfg.trials);

  std::vector<double> targets(E);
  for (size_t e = 0; e < E; ++e) targets[e] = target_for(cfg, cfg.estimators[e]);

  // Pilot cross-validation, one job per (estimator, n, run).
  std::vector<std::optional<double>> fixed(E * N);
  struct PilotJob {
    size_t e, ni;
    int t;
  };
  std::vector<PilotJob> jobs;
  for (size_t e = 0; e < E; ++e) {
    if (!pilot_applies(cfg.estimators[e])) continue;
    const int runs = std::min(cfg.estimators[e].cv_pilot_runs, cfg.trials);
    for (size_t ni = 0; ni < N; ++ni)
      for (int t = 0; t < runs; ++t) jobs.push_back({e, ni, t});
  }
  std::vector<double> pilot_logs(jobs.size());
  parallel_for(jobs.size(), cfg.workers, [&](size_t j) {
    const auto& job = jobs[j];
    pilot_logs[j] = std::log(pilot_cv_run(cfg, cfg.estimators[job.e], cfg.n_grid[job.ni], job.t));
  });
  {
    std::map<std::pair<size_t, size_t>, std::pair<double, int>> acc;
    for (size_t j = 0; j < jobs.size(); ++j) {
      auto& slot = acc[{jobs[j].e, jobs[j].ni}];
      slot.first += pilot_logs[j];
      slot.second += 1;
    }
    for (const auto& [key, v] : acc) fixed[key.first * N + key.second] = std::exp(v.first / v.second);
  }

  std::vector<TrialRecord> records(E * N * T);
  parallel_for(N * T, cfg.workers, [&](size_t cell) {
    const size_t ni = cell / T, t = cell % T;
    const Eigen::Index n = cfg.n_grid[ni];
    const std::uint64_t seed = derive_seed(cfg.base_seed, static_cast<std::uint64_t>(n), t);
    const Dataset data = sample_dataset(cfg.instance, n, seed);
    for (size_t e = 0; e < E; ++e) {
      const auto& est = cfg.estimators[e];
      TrialRecord& r = records[(e * N + ni) * T + t];
      r.estimator = est.id;
      r.n = n;
      r.trial = static_cast<std::int64_t>(t);
      r.seed = seed;
      r.tau_star = targets[e];
      const auto start = std::chrono::steady_clock::now();
      try {
        r.estimate = run_estimator(cfg, est, data, fixed[e * N + ni]);
        if (std::isfinite(r.estimate)) {
          r.status = "ok";
          r.sq_error = (r.estimate - r.tau_star) * (r.estimate - r.tau_star);
        } else {
          r.status = "nonfinite";
          r.sq_error = std::numeric_limits<double>::quiet_NaN();
        }
      } catch (...) {
        r.status = error_tag(std::current_exception());
        r.estimate = std::numeric_limits<double>::quiet_NaN();
        r.sq_error = std::numeric_limits<double>::quiet_NaN();
      }
      if (cfg.timing) {
        r.wall_ms =
            std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
      }
    }
  });
  return records;
}

// ---------------------------------------------------------------------------------------------
// Aggregation

MseCurve mse_curve(std::span<const TrialRecord> records, double tau_star) {
  if (records.empty()) throw InputError("no records to aggregate");
  MseCurve curve;
  curve.estimator = records.front().estimator;
  std::map<std::int64_t, std::vector<const TrialRecord*>> by_n;
  for (const auto& r : records) {
    if (r.estimator != curve.estimator) throw InputError("records mix estimators");
    by_n[r.n].push_back(&r);
  }
  for (const auto& [n, group] : by_n) {
    CurvePoint p;
    p.n = n;
    std::vector<double> sq;
    for (const auto* r : group) {
      if (r->ok() && std::isfinite(r->estimate)) {
        const double d = r->estimate - tau_star;
        sq.push_back(d * d);
      } else {
        ++p.excluded;
      }
    }
    p.trials = static_cast<std::int64_t>(sq.size());
    if (sq.empty()) {
      p.mse = std::numeric_limits<double>::quiet_NaN();
      p.std_error = std::numeric_limits<double>::quiet_NaN();
    } else {
      double mean = 0.0;
      for (double v : sq) mean += v;
      mean /= static_cast<double>(sq.size());
      double ss = 0.0;
      for (double v : sq) ss += (v - mean) * (v - mean);
      p.mse = mean;
      p.std_error = sq.size() > 1 ? std::sqrt(ss / (sq.size() - 1.0) / sq.size()) : 0.0;
    }
    curve.points.push_back(p);
  }
  return curve;
}

std::vector<MseCurve> mse_curves(std::span<const TrialRecord> records) {
  std::vector<std::string> order;
  std::map<std::string, std::vector<TrialRecord>> groups;
  for (const auto& r : records) {
    if (!groups.count(r.estimator)) order.push_back(r.estimator);
    groups[r.estimator].push_back(r);
  }
  std::vector<MseCurve> out;
  for (const auto& id : order) out.push_back(mse_curve(groups[id], groups[id].front().tau_star));
  return out;
}

SlopeFit loglog_slope(const MseCurve& curve) {
  if (curve.points.size() < 2) throw InputError("slope needs at least 2 points");
  std::vector<double> x, y;
  for (const auto& p : curve.points) {
    if (!(p.mse > 0.0) || !std::isfinite(p.mse)) throw InputError("slope needs positive finite MSE values");
    if (p.n < 1) throw InputError("slope needs positive sample sizes");
    x.push_back(std::log(static_cast<double>(p.n)));
    y.push_back(std::log(p.mse));
  }
  const double k = static_cast<double>(x.size());
  double mx = 0.0, my = 0.0;
  for (size_t i = 0; i < x.size(); ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= k;
  my /= k;
  double sxx = 0.0, sxy = 0.0;
  for (size_t i = 0; i < x.size(); ++i) {
    sxx += (x[i] - mx) * (x[i] - mx);
    sxy += (x[i] - mx) * (y[i] - my);
  }
  if (!(sxx > 0.0)) throw InputError("slope needs at least two distinct sample sizes");
  SlopeFit fit;
  fit.slope = sxy / sxx;
  fit.intercept = my - fit.slope * mx;
  double rss = 0.0;
  for (size_t i = 0; i < x.size(); ++i) {
    const double r = y[i] - fit.intercept - fit.slope * x[i];
    rss += r * r;
  }
  fit.std_error = x.size() > 2 ? std::sqrt(rss / (k - 2.0) / sxx) : 0.0;
  return fit;
}

// ---------------------------------------------------------------------------------------------
// Persistence

std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

double parse_double(std::string_view text) {
  if (text == "nan") return std::numeric_limits<double>::quiet_NaN();
  if (text == "inf") return std::numeric_limits<double>::infinity();
  if (text == "-inf") return -std::numeric_limits<double>::infinity();
  double v = 0.0;
  const auto res = std::from_chars(text.data(), text.data() + text.size(), v);
  if (res.ec != std::errc() || res.ptr != text.data() + text.size()) {
    throw IoError("not a number: '" + std::string(text) + "'");
  }
  return v;
}

namespace {

constexpr const char* kTrialHeader = "estimator,n,trial,seed,estimate,tau_star,sq_error,status,wall_ms";
constexpr const char* kCurveHeader = "estimator,n,trials,mse,stderr,excluded";

template <class Int>
Int parse_int(std::string_view text) {
  Int v{};
  const auto res = std::from_chars(text.data(), text.data() + text.size(), v);
  if (res.ec != std::errc() || res.ptr != text.data() + text.size()) {
    throw IoError("not an integer: '" + std::string(text) + "'");
  }
  return v;
}

std::vector<std::string_view> split(std::string_view line) {
  std::vector<std::string_view> out;
  size_t start = 0;
  while (true) {
    const size_t pos = line.find(',', start);
    out.push_back(line.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

nlohmann::json json_number(double v) {
  if (std::isfinite(v)) return v;
  return format_double(v);
}

double from_json_number(const nlohmann::json& j) {
  if (j.is_string()) return parse_double(j.get<std::string>());
  return j.get<double>();
}

void write_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  out << content;
  if (!out) throw IoError("write failed for '" + path + "'");
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

bool is_json_path(const std::string& path) {
  return path.size() >= 5 && path.compare(path.size() - 5, 5, ".json") == 0;
}

template <class Fn>
void parse_csv(const std::string& text, const char* header, size_t fields, const std::string& path, Fn&& row) {
  std::istringstream in(text);
  std::string line;
  size_t line_no = 0;
  static const char* const kNames[][9] = {
      {"estimator", "n", "trial", "seed", "estimate", "tau_star", "sq_error", "status", "wall_ms"},
      {"estimator", "n", "trials", "mse", "stderr", "excluded", "", "", ""}};
  const auto* names = fields == 9 ? kNames[0] : kNames[1];
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line_no == 1) {
      if (line != header) throw IoError(path + ":1: header mismatch, expected '" + header + "'");
      continue;
    }
    if (line.empty()) continue;
    const auto parts = split(line);
    if (parts.size() != fields) {
      throw IoError(path + ":" + std::to_string(line_no) + ": expected " + std::to_string(fields) + " fields, got " +
                    std::to_string(parts.size()));
    }
    size_t field = 0;
    try {
      row(parts, field);
    } catch (const IoError& e) {
      throw IoError(path + ":" + std::to_string(line_no) + ": field '" + names[field] + "': " + e.what());
    }
  }
  if (line_no == 0) throw IoError(path + ": empty file");
}

}  // namespace

std::string trials_csv(std::span<const TrialRecord> records) {
  std::string out = kTrialHeader;
  out += '\n';
  for (const auto& r : records) {
    out += r.estimator + ',' + std::to_string(r.n) + ',' + std::to_string(r.trial) + ',' + std::to_string(r.seed) +
           ',' + format_double(r.estimate) + ',' + format_double(r.tau_star) + ',' + format_double(r.sq_error) + ',' +
           r.status + ',' + format_double(r.wall_ms) + '\n';
  }
  return out;
}

std::string curves_csv(std::span<const MseCurve> curves) {
  std::string out = kCurveHeader;
  out += '\n';
  for (const auto& c : curves) {
    for (const auto& p : c.points) {
      out += c.estimator + ',' + std::to_string(p.n) + ',' + std::to_string(p.trials) + ',' + format_double(p.mse) +
             ',' + format_double(p.std_error) + ',' + std::to_string(p.excluded) + '\n';
    }
  }
  return out;
}

void persist_results(std::span<const TrialRecord> records, const std::string& path, FileFormat format,
                     const nlohmann::json& config_echo) {
  if (format == FileFormat::kCsv) {
    write_file(path, trials_csv(records));
    return;
  }
  nlohmann::json j;
  j["config"] = config_echo;
  j["trials"] = nlohmann::json::array();
  for (const auto& r : records) {
    j["trials"].push_back({{"estimator", r.estimator},
                           {"n", r.n},
                           {"trial", r.trial},
                           {"seed", r.seed},
                           {"estimate", json_number(r.estimate)},
                           {"tau_star", json_number(r.tau_star)},
                           {"sq_error", json_number(r.sq_error)},
                           {"status", r.status},
                           {"wall_ms", json_number(r.wall_ms)}});
  }
  write_file(path, j.dump(2) + "\n");
}

void persist_curves(std::span<const MseCurve> curves, const std::string& path, FileFormat format,
                    const nlohmann::json& config_echo) {
  if (format == FileFormat::kCsv) {
    write_file(path, curves_csv(curves));
    return;
  }
  nlohmann::json j;
  j["config"] = config_echo;
  j["curves"] = nlohmann::json::array();
  for (const auto& c : curves) {
    for (const auto& p : c.points) {
      j["curves"].push_back({{"estimator", c.estimator},
                             {"n", p.n},
                             {"trials", p.trials},
                             {"mse", json_number(p.mse)},
                             {"stderr", json_number(p.std_error)},
                             {"excluded", p.excluded}});
    }
  }
  write_file(path, j.dump(2) + "\n");
}

std::vector<TrialRecord> load_results(const std::string& path) {
  const std::string text = read_file(path);
  std::vector<TrialRecord> out;
  if (is_json_path(path)) {
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(text);
    } catch (const std::exception& e) {
      throw IoError(path + ": " + e.what());
    }
    if (!j.contains("trials") || !j["trials"].is_array()) throw IoError(path + ": missing 'trials' array");
    size_t idx = 0;
    for (const auto& t : j["trials"]) {
      try {
        TrialRecord r;
        r.estimator = t.at("estimator").get<std::string>();
        r.n = t.at("n").get<std::int64_t>();
        r.trial = t.at("trial").get<std::int64_t>();
        r.seed = t.at("seed").get<std::uint64_t>();
        r.estimate = from_json_number(t.at("estimate"));
        r.tau_star = from_json_number(t.at("tau_star"));
        r.sq_error = from_json_number(t.at("sq_error"));
        r.status = t.at("status").get<std::string>();
        r.wall_ms = from_json_number(t.at("wall_ms"));
        out.push_back(std::move(r));
      } catch (const std::exception& e) {
        throw IoError(path + ": trials[" + std::to_string(idx) + "]: " + e.what());
      }
      ++idx;
    }
    return out;
  }
  parse_csv(text, kTrialHeader, 9, path, [&](const std::vector<std::string_view>& p, size_t& field) {
    TrialRecord r;
    r.estimator = std::string(p[field = 0]);
    r.n = parse_int<std::int64_t>(p[field = 1]);
    r.trial = parse_int<std::int64_t>(p[field = 2]);
    r.seed = parse_int<std::uint64_t>(p[field = 3]);
    r.estimate = parse_double(p[field = 4]);
    r.tau_star = parse_double(p[field = 5]);
    r.sq_error = parse_double(p[field = 6]);
    r.status = std::string(p[field = 7]);
    r.wall_ms = parse_double(p[field = 8]);
    out.push_back(std::move(r));
  });
  return out;
}

std::vector<MseCurve> load_curves(const std::string& path) {
  const std::string text = read_file(path);
  std::vector<MseCurve> out;
  auto append = [&](const std::string& id, const CurvePoint& p) {
    if (out.empty() || out.back().estimator != id) {
      auto it = std::find_if(out.begin(), out.end(), [&](const MseCurve& c) { return c.estimator == id; });
      if (it == out.end()) {
        out.push_back({id, {}});
        it = out.end() - 1;
      }
      it->points.push_back(p);
      return;
    }
    out.back().points.push_back(p);
  };
  if (is_json_path(path)) {
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(text);
    } catch (const std::exception& e) {
      throw IoError(path + ": " + e.what());
    }
    if (!j.contains("curves") || !j["curves"].is_array()) throw IoError(path + ": missing 'curves' array");
    size_t idx = 0;
    for (const auto& c : j["curves"]) {
      try {
        CurvePoint p;
        p.n = c.at("n").get<std::int64_t>();
        p.trials = c.at("trials").get<std::int64_t>();
        p.mse = from_json_number(c.at("mse"));
        p.std_error = from_json_number(c.at("stderr"));
        p.excluded = c.at("excluded").get<std::int64_t>();
        append(c.at("estimator").get<std::string>(), p);
      } catch (const std::exception& e) {
        throw IoError(path + ": curves[" + std::to_string(idx) + "]: " + e.what());
      }
      ++idx;
    }
    return out;
  }
  parse_csv(text, kCurveHeader, 6, path, [&](const std::vector<std::string_view>& p, size_t& field) {
    CurvePoint pt;
    const std::string id(p[field = 0]);
    pt.n = parse_int<std::int64_t>(p[field = 1]);
    pt.trials = parse_int<std::int64_t>(p[field = 2]);
    pt.mse = parse_double(p[field = 3]);
    pt.std_error = parse_double(p[field = 4]);
    pt.excluded = parse_int<std::int64_t>(p[field = 5]);
    append(id, pt);
  });
  return out;
}

}  // namespace kpe
