#include "mobq/studies.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <limits>
#include <memory>
#include <numbers>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "mobq/errors.hpp"
#include "mobq/posterior.hpp"
#include "mobq/quadrature.hpp"
#include "mobq/testbeds.hpp"

namespace mobq {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

std::string format_double(double v) {
  if (std::isnan(v)) return "";
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

double median(std::vector<double> v) {
  if (v.empty()) return kNaN;
  const std::size_t mid = v.size() / 2;
  std::nth_element(v.begin(), v.begin() + mid, v.end());
  double hi = v[mid];
  if (v.size() % 2 == 1) return hi;
  std::nth_element(v.begin(), v.begin() + mid - 1, v.end());
  return 0.5 * (v[mid - 1] + hi);
}

void parallel_for(int items, int threads, const std::function<void(int)>& body) {
  if (threads <= 1 || items <= 1) {
    for (int i = 0; i < items; ++i) body(i);
    return;
  }
  std::atomic<int> next{0};
  auto worker = [&]() {
    for (int i = next.fetch_add(1); i < items; i = next.fetch_add(1)) body(i);
  };
  std::vector<std::thread> pool;
  const int n_threads = std::min(threads, items);
  pool.reserve(n_threads);
  for (int t = 0; t < n_threads; ++t) pool.emplace_back(worker);
  for (auto& t : pool) t.join();
}

class StopWatch {
 public:
  explicit StopWatch(bool enabled) : enabled_(enabled) {
    if (enabled_) start_ = std::chrono::steady_clock::now();
  }
  double elapsed_ms() const {
    if (!enabled_) return 0.0;
    return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start_)
        .count();
  }

 private:
  bool enabled_;
  std::chrono::steady_clock::time_point start_;
};

double data_std(const Eigen::VectorXd& v) {
  if (v.size() < 2) return 1.0;
  const double mean = v.mean();
  const double sd = std::sqrt((v.array() - mean).square().sum() / (v.size() - 1));
  return sd > 1e-8 ? sd : 1.0;
}

double median_pairwise_distance(const PointList& pts) {
  std::vector<double> d;
  for (std::size_t i = 0; i < pts.size(); ++i)
    for (std::size_t j = i + 1; j < pts.size(); ++j) d.push_back((pts[i] - pts[j]).norm());
  if (d.empty()) return 1.0;
  return std::max(median(std::move(d)), 1e-6);
}

}  // namespace

// --- Reference integrals ---------------------------------------------------------

ReferenceIntegral reference_integral(const std::function<double(const Point&)>& f,
                                     const Measure& measure, double accuracy_target,
                                     const std::vector<double>& breakpoints) {
  if (accuracy_target <= 0.0)
    throw InvalidArgumentError("reference_integral: accuracy target must be positive");
  if (measure.is_box()) {
    const auto& box = measure.box();
    const double volume = (box.upper - box.lower).prod();
    AdaptiveResult res;
    if (measure.dimension() == 1) {
      res = gl_integrate_adaptive([&](double t) { Point p(1); p[0] = t; return f(p); },
                                  box.lower[0], box.upper[0], accuracy_target * volume,
                                  breakpoints);
    } else {
      res = gl_integrate_box(f, box.lower, box.upper, accuracy_target * volume);
    }
    if (!res.converged)
      throw AccuracyNotMetError("reference_integral: node budget exhausted", res.value / volume,
                                res.error_estimate / volume);
    return {res.value / volume, ReferenceMethod::quadrature, res.error_estimate / volume};
  }
  auto res = sphere_average_adaptive(f, accuracy_target);
  if (!res.converged)
    throw AccuracyNotMetError("reference_integral: point budget exhausted", res.value,
                              res.error_estimate);
  return {res.value, ReferenceMethod::qmc, res.error_estimate};
}

ReferenceIntegral sphere_cap_reference(const std::function<double(const Point&)>& f,
                                       const Point& axis, double accuracy_target) {
  auto res = sphere_cap_average_adaptive(f, axis, accuracy_target);
  if (!res.converged)
    throw AccuracyNotMetError("sphere_cap_reference: node budget exhausted", res.value,
                              res.error_estimate);
  return {res.value, ReferenceMethod::quadrature, res.error_estimate};
}

// --- Slope fitting ------------------------------------------------------------------

SlopeFit fit_loglog_slope(const std::vector<std::pair<double, double>>& pairs) {
  if (pairs.size() < 4) throw InvalidDataError("fit_loglog_slope: need at least 4 pairs");
  const int n = static_cast<int>(pairs.size());
  Eigen::VectorXd x(n), y(n);
  for (int i = 0; i < n; ++i) {
    if (!(pairs[i].first > 0.0) || !(pairs[i].second > 0.0))
      throw InvalidDataError("fit_loglog_slope: values must be strictly positive");
    x[i] = std::log(pairs[i].first);
    y[i] = std::log(pairs[i].second);
  }
  const double xbar = x.mean(), ybar = y.mean();
  const double sxx = (x.array() - xbar).square().sum();
  if (sxx <= 0.0) throw InvalidDataError("fit_loglog_slope: degenerate abscissae");
  const double slope = (x.array() - xbar).cwiseProduct(y.array() - ybar).sum() / sxx;
  const double intercept = ybar - slope * xbar;
  const Eigen::ArrayXd resid = y.array() - intercept - slope * x.array();
  const double sigma2 = resid.square().sum() / std::max(1, n - 2);
  const double half_width = 2.0 * std::sqrt(sigma2 / sxx);
  return {slope, intercept, half_width};
}

// --- Report emission -----------------------------------------------------------------

void write_csv(const StudyReport& report, std::ostream& out, bool timestamp_header) {
  if (timestamp_header) {
    const std::time_t now = std::time(nullptr);
    char buf[64];
    std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&now));
    out << "# generated " << buf << "\n";
  }
  out << "study,method,D,d,channel,N,seed,abs_error,variance,wce,eta,wall_ms\n";
  for (const auto& r : report.records) {
    out << r.study << ',' << r.method << ',' << r.outputs << ',' << r.output << ',' << r.channel
        << ',' << r.n << ',' << r.seed << ',' << format_double(r.abs_error) << ','
        << format_double(r.variance) << ',' << format_double(r.wce) << ','
        << format_double(r.eta) << ',' << format_double(r.wall_ms) << "\n";
  }
}

void write_summary_json(const StudyReport& report, std::ostream& out) {
  nlohmann::json j;
  j["study"] = report.study;
  j["seed"] = report.seed;
  j["records"] = report.records.size();
  j["slopes"] = nlohmann::json::array();
  for (const auto& s : report.slopes) {
    j["slopes"].push_back({{"key", s.key},
                           {"slope", s.fit.slope},
                           {"intercept", s.fit.intercept},
                           {"half_width", s.fit.half_width}});
  }
  j["notes"] = report.notes;
  out << j.dump(2) << "\n";
}

// --- Convergence study ------------------------------------------------------------------

DesignGenerator grid_design_generator(double a, double b, int outputs) {
  return [a, b, outputs](int n, Rng&) {
    return Design::shared_design(equidistant_grid(n, a, b), outputs);
  };
}

DesignGenerator iid_design_generator(const Measure& measure, int outputs, bool shared) {
  return [measure, outputs, shared](int n, Rng& rng) {
    if (shared) return Design::shared_design(sample_measure(measure, n, rng), outputs);
    std::vector<PointList> per;
    per.reserve(outputs);
    for (int d = 0; d < outputs; ++d) per.push_back(sample_measure(measure, n, rng));
    return Design(std::move(per));
  };
}

StudyReport convergence_study(const ConvergenceConfig& config) {
  if (config.n_schedule.size() < 2)
    throw InvalidArgumentError("convergence_study: schedule needs at least two sizes");
  if (config.seeds < 1) throw InvalidArgumentError("convergence_study: seeds must be >= 1");

  const int D = config.kernel.outputs();
  const int cells = static_cast<int>(config.n_schedule.size()) * config.seeds;
  std::vector<std::vector<StudyRecord>> cell_records(cells);

  parallel_for(cells, config.threads, [&](int cell) {
    const int ni = cell / config.seeds;
    const int si = cell % config.seeds;
    const int n = config.n_schedule[ni];
    Rng rng = Rng(config.seed).split(static_cast<std::uint64_t>(cell));
    StopWatch watch(config.record_timing);

    Design design = config.designs(n, rng);
    std::vector<Eigen::VectorXd> per_output(D);
    for (int d = 0; d < D; ++d) {
      Eigen::VectorXd v(design.count(d));
      for (int i = 0; i < design.count(d); ++i) v[i] = config.family.eval(d, design.points(d)[i]);
      per_output[d] = v;
    }
    Dataset data(design, flatten_values(design, per_output));
    BQModel model = fit(config.kernel, config.measure, data);
    BQPosterior post = integral_posterior(model, data);
    const double ms = watch.elapsed_ms();

    for (int d = 0; d < D; ++d) {
      StudyRecord rec;
      rec.study = "converge/" + config.family.name;
      rec.method = "bq";
      rec.outputs = D;
      rec.output = d + 1;
      rec.n = n;
      rec.seed = static_cast<std::uint64_t>(si);
      rec.wce = worst_case_error(post, d);
      rec.variance = post.cov(d, d);
      rec.eta = post.jitter_used;
      rec.abs_error = config.family.reference.empty()
                          ? kNaN
                          : std::abs(post.mean[d] - config.family.reference[d]);
      rec.wall_ms = ms;
      cell_records[cell].push_back(std::move(rec));
    }
  });

  StudyReport report;
  report.study = "converge/" + config.family.name;
  report.seed = config.seed;
  for (auto& cr : cell_records)
    for (auto& r : cr) report.records.push_back(std::move(r));

  // Slopes of the median curves per output.
  for (int d = 1; d <= D; ++d) {
    for (const char* what : {"wce", "err"}) {
      std::vector<std::pair<double, double>> pairs;
      for (int n : config.n_schedule) {
        std::vector<double> vals;
        for (const auto& r : report.records) {
          if (r.output != d || r.n != n) continue;
          const double v = std::string(what) == "wce" ? r.wce : r.abs_error;
          if (std::isfinite(v) && v > 0.0) vals.push_back(v);
        }
        if (!vals.empty()) pairs.emplace_back(n, median(std::move(vals)));
      }
      if (pairs.size() >= 4) {
        report.slopes.push_back(
            {std::string(what) + "/d" + std::to_string(d), fit_loglog_slope(pairs)});
      }
    }
  }
  return report;
}

// --- Canned convergence setups --------------------------------------------------------------

ConvergenceConfig sphere_rate_config(int outputs, std::vector<int> n_schedule, int seeds,
                                     std::uint64_t seed) {
  const double step = 0.005 * std::numbers::pi;
  auto scene = std::make_shared<IlluminationScene>(default_illumination_scene(outputs, step));
  const Measure sphere = Measure::uniform_sphere();

  IntegrandFamily family;
  family.name = "sphere_d" + std::to_string(outputs);
  family.eval = [scene](int d, const Point& x) { return illumination_integrand(*scene, 0, d, x); };
  for (int d = 0; d < outputs; ++d) {
    family.reference.push_back(
        sphere_cap_reference(
            [&](const Point& w) { return illumination_integrand(*scene, 0, d, w); },
            scene->cameras[d], 1e-9)
            .value);
  }

  ConvergenceConfig config{
      OutputKernel::separable(camera_covariance(scene->cameras), ScalarKernel::sphere_sobolev32()),
      sphere,
      std::move(family),
      iid_design_generator(sphere, outputs, /*shared=*/false),
      std::move(n_schedule),
      seeds,
      seed,
      false,
      1};
  return config;
}

namespace {

IntegrandFamily smooth_unit_family() {
  IntegrandFamily family;
  family.name = "smooth";
  family.eval = [](int, const Point& x) { return std::sin(2.0 * std::numbers::pi * x[0]) + x[0]; };
  family.reference = {0.5};
  return family;
}

}  // namespace

ConvergenceConfig matern_grid_rate_config(double alpha, std::vector<int> n_schedule,
                                          std::uint64_t seed) {
  ConvergenceConfig config{
      OutputKernel::separable(Eigen::MatrixXd::Identity(1, 1),
                              ScalarKernel::matern(alpha, 1.0, 0.15)),
      Measure::uniform_box(0.0, 1.0),
      smooth_unit_family(),
      grid_design_generator(0.0, 1.0, 1),
      std::move(n_schedule),
      1,
      seed,
      false,
      1};
  config.family.name = "matern_grid";
  return config;
}

ConvergenceConfig sum_kernel_rate_config(std::vector<int> n_schedule, std::uint64_t seed) {
  std::vector<OutputKernel> terms;
  terms.push_back(OutputKernel::separable(Eigen::MatrixXd::Identity(1, 1),
                                          ScalarKernel::matern(1.5, 1.0, 0.15)));
  terms.push_back(OutputKernel::separable(Eigen::MatrixXd::Identity(1, 1),
                                          ScalarKernel::matern(2.5, 1.0, 0.15)));
  ConvergenceConfig config{OutputKernel::sum(std::move(terms)),
                           Measure::uniform_box(0.0, 1.0),
                           smooth_unit_family(),
                           grid_design_generator(0.0, 1.0, 1),
                           std::move(n_schedule),
                           1,
                           seed,
                           false,
                           1};
  config.family.name = "sum_kernel";
  return config;
}

ConvergenceConfig misspecified_rate_config(std::vector<int> n_schedule, std::uint64_t seed) {
  IntegrandFamily family;
  family.name = "misspecified";
  // |x - 0.47| lies in Sobolev spaces up to (but not including) smoothness
  // 3/2 on [0, 1]; the Matern-5/2 prior is deliberately too smooth.
  family.eval = [](int, const Point& x) { return std::abs(x[0] - 0.47); };
  family.reference = {(0.47 * 0.47 + 0.53 * 0.53) / 2.0};
  ConvergenceConfig config{
      OutputKernel::separable(Eigen::MatrixXd::Identity(1, 1),
                              ScalarKernel::matern(2.5, 1.0, 0.2)),
      Measure::uniform_box(0.0, 1.0),
      std::move(family),
      grid_design_generator(0.0, 1.0, 1),
      std::move(n_schedule),
      1,
      seed,
      false,
      1};
  return config;
}

// --- Multi-fidelity study ----------------------------------------------------------------

namespace {

struct MfProblem {
  std::string name;
  Measure measure;
  std::function<double(double, Fidelity)> eval;
  PointList high_points;
  PointList low_points;
  double reference_high;
  double reference_low;
  double ref_accuracy;
};

PointList take_indices(const PointList& pts, const std::vector<int>& one_based, bool complement) {
  PointList out;
  for (int i = 0; i < static_cast<int>(pts.size()); ++i) {
    const bool in = std::find(one_based.begin(), one_based.end(), i + 1) != one_based.end();
    if (in != complement) out.push_back(pts[i]);
  }
  return out;
}

MfProblem make_problem(const MultiFidelityConfig& config) {
  MfProblem p;
  switch (config.function) {
    case MfFunction::step: {
      p.name = "step";
      p.measure = Measure::uniform_box(0.0, 2.0);
      p.eval = [](double x, Fidelity f) { return step_function(x, f); };
      const PointList grid = equidistant_grid(20, 0.0, 2.0);
      const std::vector<int> high_idx{4, 10, 11, 14, 17};
      p.high_points = take_indices(grid, high_idx, false);
      p.low_points = take_indices(grid, high_idx, true);
      // Piecewise-constant integrals are exact.
      p.reference_high = 0.5;
      p.reference_low = 0.5;
      p.ref_accuracy = 0.0;
      break;
    }
    case MfFunction::forrester: {
      p.name = "forrester";
      p.measure = Measure::uniform_box(0.0, 1.0);
      p.eval = [](double x, Fidelity f) { return forrester_jump(x, f); };
      const PointList grid = equidistant_grid(20, 0.0, 1.0);
      const std::vector<int> high_idx{4, 10, 11, 14, 17};
      p.high_points = take_indices(grid, high_idx, false);
      p.low_points = take_indices(grid, high_idx, true);
      auto ref = [&](Fidelity f) {
        return reference_integral(
            [&](const Point& x) { return forrester_jump(x[0], f); }, p.measure, 1e-11, {0.5});
      };
      const auto rh = ref(Fidelity::high);
      const auto rl = ref(Fidelity::low);
      p.reference_high = rh.value;
      p.reference_low = rl.value;
      p.ref_accuracy = std::max(rh.estimated_accuracy, rl.estimated_accuracy);
      break;
    }
    case MfFunction::allen_cahn: {
      p.name = "allen_cahn";
      p.measure = Measure::uniform_box(0.0, 10.0);
      auto low = std::make_shared<BVPSolution>(allen_cahn_solve(2.0, config.allen_cahn_grid));
      auto high = std::make_shared<BVPSolution>(allen_cahn_solve(0.1, config.allen_cahn_grid));
      p.eval = [low, high](double x, Fidelity f) {
        return f == Fidelity::high ? (*high)(x) : (*low)(x);
      };
      const PointList grid = equidistant_grid(11, 0.0, 10.0);
      PointList hp, lp;
      for (const auto& pt : grid) {
        const double x = pt[0];
        if (x == 2.0 || x == 5.0 || x == 8.0) hp.push_back(pt);
        else lp.push_back(pt);
      }
      p.high_points = std::move(hp);
      p.low_points = std::move(lp);
      auto rh = reference_integral([&](const Point& x) { return p.eval(x[0], Fidelity::high); },
                                   p.measure, 1e-10);
      auto rl = reference_integral([&](const Point& x) { return p.eval(x[0], Fidelity::low); },
                                   p.measure, 1e-10);
      p.reference_high = rh.value;
      p.reference_low = rl.value;
      p.ref_accuracy = std::max(rh.estimated_accuracy, rl.estimated_accuracy);
      break;
    }
  }
  return p;
}

Eigen::VectorXd eval_on(const MfProblem& p, const PointList& pts, Fidelity f) {
  Eigen::VectorXd v(static_cast<Eigen::Index>(pts.size()));
  for (Eigen::Index i = 0; i < v.size(); ++i) v[i] = p.eval(pts[i][0], f);
  return v;
}

std::string theta_to_string(const Eigen::VectorXd& theta) {
  std::ostringstream os;
  os << "[";
  for (Eigen::Index i = 0; i < theta.size(); ++i) {
    if (i) os << ", ";
    os << format_double(theta[i]);
  }
  os << "]";
  return os.str();
}

}  // namespace

namespace {

struct MfRun {
  Eigen::VectorXd mean;      // [high, low]
  Eigen::VectorXd variance;
  Eigen::VectorXd wce;
  double jitter = 0.0;
  std::vector<std::string> notes;
};

// Runs one method on the problem; empirical Bayes throughout. The optimizer
// seed is offset per method by the caller.
MfRun run_mf_method(const MfProblem& problem, MfMethod method, const OptimizerConfig& opt) {
  MfRun run;
  run.mean.resize(2);
  run.variance.resize(2);
  run.wce.resize(2);

  const Eigen::VectorXd f_high = eval_on(problem, problem.high_points, Fidelity::high);
  const Eigen::VectorXd f_low = eval_on(problem, problem.low_points, Fidelity::low);

  if (method == MfMethod::uni_bq) {
    int d = 0;
    for (const auto* side : {&problem.high_points, &problem.low_points}) {
      const Eigen::VectorXd& values = d == 0 ? f_high : f_low;
      Design design({*side});
      Dataset data(design, values);
      OutputKernel schema = OutputKernel::separable(
          Eigen::MatrixXd::Identity(1, 1),
          ScalarKernel::squared_exponential(data_std(values), median_pairwise_distance(*side)));
      // B = [1] fixed; the scalar amplitude carries the output scale.
      OptimizerConfig uni_opt = opt;
      uni_opt.frozen = {0};  // log chol(B) diagonal
      OptimizeResult best = optimize(schema, data, problem.measure, uni_opt);
      BQModel model = fit(unpack_hypers(schema, best.theta), problem.measure, data);
      BQPosterior post = integral_posterior(model, data);
      run.mean[d] = post.mean[0];
      run.variance[d] = post.cov(0, 0);
      run.wce[d] = worst_case_error(post, 0);
      run.jitter = std::max(run.jitter, post.jitter_used);
      run.notes.push_back("bq d" + std::to_string(d + 1) + " theta=" +
                          theta_to_string(best.theta) + " lml=" + format_double(best.lml));
      ++d;
    }
    return run;
  }

  // Joint design: output 1 = high fidelity, output 2 = low fidelity.
  Design joint({problem.high_points, problem.low_points});
  Dataset joint_data(joint, flatten_values(joint, {f_high, f_low}));

  PointList pooled = problem.high_points;
  pooled.insert(pooled.end(), problem.low_points.begin(), problem.low_points.end());
  const double len0 = median_pairwise_distance(pooled);
  const double sd_h = data_std(f_high);
  const double sd_l = data_std(f_low);

  OutputKernel schema = [&]() {
    if (method == MfMethod::lmc_bq) {
      Eigen::MatrixXd factors = Eigen::MatrixXd::Zero(2, 2);
      factors(0, 0) = sd_h;
      factors(1, 1) = sd_l;
      return OutputKernel::lmc(factors, ScalarKernel::squared_exponential(1.0, len0));
    }
    // Process convolution: widths sized so each entry's effective width
    // starts at len0; amplitudes sized so the starting marginal variances
    // match the data.
    const double w = len0 / std::sqrt(3.0);
    Eigen::MatrixXd blur_amp(2, 2), blur_width(2, 2);
    Eigen::VectorXd lat_amp(2), lat_width(2);
    for (int i = 0; i < 2; ++i) {
      lat_amp[i] = 1.0;
      lat_width[i] = w;
      for (int d = 0; d < 2; ++d) {
        const double var_d = (d == 0 ? sd_h * sd_h : sd_l * sd_l);
        blur_width(i, d) = w;
        blur_amp(i, d) = std::pow(
            3.0 * std::sqrt(3.0) * var_d / (4.0 * std::numbers::pi * len0 * len0), 0.25);
      }
    }
    return OutputKernel::process_convolution(blur_amp, blur_width, lat_amp, lat_width);
  }();

  OptimizerConfig mo_opt = opt;
  if (method == MfMethod::lmc_bq) {
    // Freeze the base amplitude; the factor matrix carries output scales.
    const auto names = hyper_names(schema);
    for (int i = 0; i < static_cast<int>(names.size()); ++i)
      if (names[i].find("log_amplitude") != std::string::npos) mo_opt.frozen.push_back(i);
  }

  OptimizeResult best = optimize(schema, joint_data, problem.measure, mo_opt);
  BQModel model = fit(unpack_hypers(schema, best.theta), problem.measure, joint_data);
  BQPosterior post = integral_posterior(model, joint_data);
  const std::string name = method == MfMethod::lmc_bq ? "lmc" : "pc";
  run.notes.push_back(name + " theta=" + theta_to_string(best.theta) +
                      " lml=" + format_double(best.lml));
  for (int d = 0; d < 2; ++d) {
    run.mean[d] = post.mean[d];
    run.variance[d] = post.cov(d, d);
    run.wce[d] = worst_case_error(post, d);
  }
  run.jitter = post.jitter_used;
  return run;
}

std::string mf_method_name(MfMethod method) {
  switch (method) {
    case MfMethod::uni_bq: return "bq";
    case MfMethod::lmc_bq: return "lmc";
    case MfMethod::pc_bq: return "pc";
  }
  return "?";
}

}  // namespace

StudyReport multifidelity_study(const MultiFidelityConfig& config) {
  const MfProblem problem = make_problem(config);
  StudyReport report;
  report.study = "multifidelity/" + problem.name;
  report.seed = config.seed;
  report.notes.push_back("base kernel: squared exponential (the paper does not name one)");
  report.notes.push_back("reference high=" + format_double(problem.reference_high) +
                         " low=" + format_double(problem.reference_low) +
                         " accuracy=" + format_double(problem.ref_accuracy));

  int method_index = 0;
  for (MfMethod method : config.methods) {
    OptimizerConfig opt = config.optimizer;
    opt.seed = config.optimizer.seed + 1000003ULL * static_cast<std::uint64_t>(method_index++);
    StopWatch watch(config.record_timing);
    MfRun run = run_mf_method(problem, method, opt);
    const double ms = watch.elapsed_ms();
    for (const auto& note : run.notes) report.notes.push_back(note);

    const std::string name = mf_method_name(method);
    for (int d = 0; d < 2; ++d) {
      StudyRecord rec;
      rec.study = report.study;
      rec.method = name;
      rec.outputs = method == MfMethod::uni_bq ? 1 : 2;
      rec.output = d + 1;  // 1 = high fidelity, 2 = low fidelity
      rec.n = d == 0 ? static_cast<int>(problem.high_points.size())
                     : static_cast<int>(problem.low_points.size());
      rec.seed = opt.seed;
      rec.abs_error =
          std::abs(run.mean[d] - (d == 0 ? problem.reference_high : problem.reference_low));
      rec.variance = run.variance[d];
      rec.wce = run.wce[d];
      rec.eta = run.jitter;
      rec.wall_ms = ms;
      report.records.push_back(std::move(rec));
    }
  }
  return report;
}

IntegrateOutcome multifidelity_integrate(const MultiFidelityConfig& config, MfMethod method) {
  const MfProblem problem = make_problem(config);
  MfRun run = run_mf_method(problem, method, config.optimizer);
  IntegrateOutcome out;
  out.mean = run.mean;
  out.variance = run.variance;
  out.reference.resize(2);
  out.reference << problem.reference_high, problem.reference_low;
  out.jitter = run.jitter;
  out.notes = std::move(run.notes);
  return out;
}

// --- Global illumination study ---------------------------------------------------------------

StudyReport illumination_study(const IlluminationConfig& config) {
  if (config.seeds < 1) throw InvalidArgumentError("illumination_study: seeds must be >= 1");
  const int max_outputs = *std::max_element(config.output_counts.begin(),
                                            config.output_counts.end());
  const IlluminationScene scene = default_illumination_scene(max_outputs, config.angular_step);
  const Measure sphere = Measure::uniform_sphere();
  const char* channel_names[3] = {"r", "g", "b"};

  StudyReport report;
  report.study = "illumination";
  report.seed = config.seed;
  report.notes.push_back("angular step = " + format_double(config.angular_step));

  // References per (channel, camera); the integrand is supported on the
  // camera's hemisphere and smooth there.
  std::vector<std::array<double, 3>> reference(max_outputs);
  for (int cam = 0; cam < max_outputs; ++cam) {
    for (int ch = 0; ch < 3; ++ch) {
      auto ref = sphere_cap_reference(
          [&](const Point& w) { return illumination_integrand(scene, ch, cam, w); },
          scene.cameras[cam], 1e-9);
      reference[cam][ch] = ref.value;
      report.notes.push_back(std::string("reference cam") + std::to_string(cam + 1) + "/" +
                             channel_names[ch] + " = " + format_double(ref.value) +
                             " (accuracy " + format_double(ref.estimated_accuracy) + ")");
    }
  }

  struct Cell {
    int D, n;
    int seed_index;
  };
  std::vector<Cell> cells;
  for (int D : config.output_counts)
    for (int n : config.n_schedule)
      for (int s = 0; s < config.seeds; ++s) cells.push_back({D, n, s});

  std::vector<std::vector<StudyRecord>> cell_records(cells.size());

  parallel_for(static_cast<int>(cells.size()), config.threads, [&](int ci) {
    const Cell& cell = cells[ci];
    const int D = cell.D;
    Rng rng = Rng(config.seed).split(static_cast<std::uint64_t>(ci));
    StopWatch watch(config.record_timing);

    PointList cams(scene.cameras.begin(), scene.cameras.begin() + D);
    OutputKernel kernel =
        OutputKernel::separable(camera_covariance(cams), ScalarKernel::sphere_sobolev32());

    // Independent IID sample set per output.
    std::vector<PointList> per;
    per.reserve(D);
    for (int d = 0; d < D; ++d) per.push_back(sample_measure(sphere, cell.n, rng));
    Design design(std::move(per));

    std::array<std::vector<Eigen::VectorXd>, 3> channel_values;
    for (int ch = 0; ch < 3; ++ch) {
      channel_values[ch].resize(D);
      for (int d = 0; d < D; ++d) {
        Eigen::VectorXd v(cell.n);
        for (int i = 0; i < cell.n; ++i)
          v[i] = illumination_integrand(scene, ch, d, design.points(d)[i]);
        channel_values[ch][d] = v;
      }
    }

    Dataset fit_data(design, flatten_values(design, channel_values[0]));
    BQModel model = fit(kernel, sphere, fit_data);

    for (int ch = 0; ch < 3; ++ch) {
      Dataset data(design, flatten_values(design, channel_values[ch]));
      BQPosterior post = integral_posterior(model, data);
      const double ms = watch.elapsed_ms();
      for (int d = 0; d < D; ++d) {
        StudyRecord rec;
        rec.study = "illumination";
        rec.method = "bq";
        rec.outputs = D;
        rec.output = d + 1;
        rec.channel = channel_names[ch];
        rec.n = cell.n;
        rec.seed = static_cast<std::uint64_t>(cell.seed_index);
        rec.abs_error = std::abs(post.mean[d] - reference[d][ch]);
        rec.variance = post.cov(d, d);
        rec.wce = worst_case_error(post, d);
        rec.eta = post.jitter_used;
        rec.wall_ms = ms;
        cell_records[ci].push_back(std::move(rec));

        // Monte Carlo baseline on output d's own points.
        const Eigen::VectorXd& v = channel_values[ch][d];
        StudyRecord mc;
        mc.study = "illumination";
        mc.method = "mc";
        mc.outputs = D;
        mc.output = d + 1;
        mc.channel = channel_names[ch];
        mc.n = cell.n;
        mc.seed = static_cast<std::uint64_t>(cell.seed_index);
        mc.abs_error = std::abs(v.mean() - reference[d][ch]);
        const double sample_var = (v.array() - v.mean()).square().sum() / std::max(1, cell.n - 1);
        mc.variance = sample_var / cell.n;
        mc.wce = kNaN;
        mc.eta = kNaN;
        mc.wall_ms = 0.0;
        cell_records[ci].push_back(std::move(mc));
      }
    }
  });

  for (auto& cr : cell_records)
    for (auto& r : cr) report.records.push_back(std::move(r));

  // WCE slopes per (D, d) on the median curve (channel-independent; use "r").
  for (int D : config.output_counts) {
    for (int d = 1; d <= D; ++d) {
      std::vector<std::pair<double, double>> pairs;
      for (int n : config.n_schedule) {
        std::vector<double> vals;
        for (const auto& r : report.records) {
          if (r.method == "bq" && r.outputs == D && r.output == d && r.n == n &&
              r.channel == "r" && std::isfinite(r.wce) && r.wce > 0.0)
            vals.push_back(r.wce);
        }
        if (!vals.empty()) pairs.emplace_back(n, median(std::move(vals)));
      }
      if (pairs.size() >= 4) {
        report.slopes.push_back({"wce/D" + std::to_string(D) + "/d" + std::to_string(d),
                                 fit_loglog_slope(pairs)});
      }
    }
  }
  // Error slopes per (D, d, channel).
  for (int D : config.output_counts) {
    for (int d = 1; d <= D; ++d) {
      for (const char* ch : channel_names) {
        std::vector<std::pair<double, double>> pairs;
        for (int n : config.n_schedule) {
          std::vector<double> vals;
          for (const auto& r : report.records) {
            if (r.method == "bq" && r.outputs == D && r.output == d && r.n == n &&
                r.channel == ch && std::isfinite(r.abs_error) && r.abs_error > 0.0)
              vals.push_back(r.abs_error);
          }
          if (!vals.empty()) pairs.emplace_back(n, median(std::move(vals)));
        }
        if (pairs.size() >= 4) {
          report.slopes.push_back({"err/D" + std::to_string(D) + "/d" + std::to_string(d) + "/" +
                                       ch,
                                   fit_loglog_slope(pairs)});
        }
      }
    }
  }
  return report;
}

}  // namespace mobq
