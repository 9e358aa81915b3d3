#include "mobq/cli.hpp"

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <numbers>
#include <optional>

#include <CLI11.hpp>
#include <json.hpp>

#include "mobq/errors.hpp"
#include "mobq/posterior.hpp"
#include "mobq/studies.hpp"

namespace mobq::cli {

namespace {

using nlohmann::json;

enum class LogLevel { error = 0, info = 1, debug = 2 };

LogLevel log_level() {
  const char* env = std::getenv("MOBQ_LOG");
  if (!env) return LogLevel::error;
  const std::string v(env);
  if (v == "debug") return LogLevel::debug;
  if (v == "info") return LogLevel::info;
  return LogLevel::error;
}

void log_info(const std::string& msg) {
  if (log_level() >= LogLevel::info) std::cerr << "[mobq] " << msg << "\n";
}

std::string fmt17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

// --- JSON -> domain objects ------------------------------------------------

[[noreturn]] void config_error(const std::string& msg) {
  throw InvalidArgumentError("config: " + msg);
}

Eigen::VectorXd parse_vector(const json& j) {
  if (!j.is_array()) config_error("expected an array of numbers");
  Eigen::VectorXd v(j.size());
  for (std::size_t i = 0; i < j.size(); ++i) v[static_cast<Eigen::Index>(i)] = j[i].get<double>();
  return v;
}

// Row-major matrix; either nested rows or a flat array with explicit `rows`.
Eigen::MatrixXd parse_matrix(const json& j, int rows_hint = -1) {
  if (!j.is_array() || j.empty()) config_error("expected a matrix");
  if (j[0].is_array()) {
    const int rows = static_cast<int>(j.size());
    const int cols = static_cast<int>(j[0].size());
    Eigen::MatrixXd m(rows, cols);
    for (int r = 0; r < rows; ++r) {
      if (static_cast<int>(j[r].size()) != cols) config_error("ragged matrix rows");
      for (int c = 0; c < cols; ++c) m(r, c) = j[r][c].get<double>();
    }
    return m;
  }
  const int total = static_cast<int>(j.size());
  int rows = rows_hint;
  if (rows <= 0) {
    rows = static_cast<int>(std::lround(std::sqrt(static_cast<double>(total))));
    if (rows * rows != total) config_error("flat matrix needs a square length or a rows hint");
  }
  if (total % rows != 0) config_error("flat matrix length not divisible by rows");
  const int cols = total / rows;
  Eigen::MatrixXd m(rows, cols);
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) m(r, c) = j[r * cols + c].get<double>();
  return m;
}

ScalarKernel parse_scalar_kernel(const json& j) {
  const std::string kind = j.value("kind", "");
  if (kind == "matern")
    return ScalarKernel::matern(j.value("alpha", 1.5), j.value("amplitude", 1.0),
                                j.value("lengthscale", 1.0));
  if (kind == "se" || kind == "squared_exponential")
    return ScalarKernel::squared_exponential(j.value("amplitude", 1.0),
                                             j.value("lengthscale", 1.0));
  if (kind == "sphere_sobolev32") return ScalarKernel::sphere_sobolev32();
  config_error("unknown scalar kernel kind '" + kind + "'");
}

OutputKernel parse_output_kernel(const json& j) {
  const std::string kind = j.value("kind", "");
  if (kind == "separable") {
    if (!j.contains("B") || !j.contains("base")) config_error("separable needs B and base");
    return OutputKernel::separable(parse_matrix(j["B"]), parse_scalar_kernel(j["base"]));
  }
  if (kind == "lmc") {
    if (!j.contains("factors") || !j.contains("base")) config_error("lmc needs factors and base");
    Eigen::VectorXd nugget;
    if (j.contains("nugget")) nugget = parse_vector(j["nugget"]);
    return OutputKernel::lmc(parse_matrix(j["factors"], j.value("latents", -1)),
                             parse_scalar_kernel(j["base"]), std::move(nugget));
  }
  if (kind == "pc" || kind == "process_convolution") {
    for (const char* f : {"blur_amplitudes", "blur_widths", "latent_amplitude", "latent_width"})
      if (!j.contains(f)) config_error(std::string("pc needs field ") + f);
    const Eigen::VectorXd la = parse_vector(j["latent_amplitude"]);
    const int R = static_cast<int>(la.size());
    std::vector<ScalarKernel> wk;
    if (j.contains("output_kernels"))
      for (const auto& s : j["output_kernels"]) wk.push_back(parse_scalar_kernel(s));
    return OutputKernel::process_convolution(parse_matrix(j["blur_amplitudes"], R),
                                             parse_matrix(j["blur_widths"], R), la,
                                             parse_vector(j["latent_width"]), std::move(wk));
  }
  if (kind == "sum") {
    if (!j.contains("terms")) config_error("sum needs terms");
    std::vector<OutputKernel> terms;
    for (const auto& t : j["terms"]) terms.push_back(parse_output_kernel(t));
    return OutputKernel::sum(std::move(terms));
  }
  config_error("unknown output kernel kind '" + kind + "'");
}

OptimizerConfig parse_optimizer(const json& j) {
  OptimizerConfig c;
  c.restarts = j.value("restarts", c.restarts);
  c.max_iters = j.value("max_iters", c.max_iters);
  c.grad_tol = j.value("grad_tol", c.grad_tol);
  c.seed = j.value("seed", c.seed);
  c.line_search.initial_step = j.value("initial_step", c.line_search.initial_step);
  c.line_search.shrink = j.value("shrink", c.line_search.shrink);
  c.line_search.sufficient_increase =
      j.value("sufficient_increase", c.line_search.sufficient_increase);
  return c;
}

json load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) config_error("cannot open " + path);
  json j;
  try {
    in >> j;
  } catch (const json::parse_error& e) {
    config_error(std::string("JSON parse failure: ") + e.what());
  }
  if (!j.is_object()) config_error("top-level document must be an object");
  if (j.value("schema_version", 0) != 1) config_error("schema_version must be 1");
  return j;
}

MfFunction parse_mf_function(const std::string& name) {
  if (name == "step") return MfFunction::step;
  if (name == "forrester") return MfFunction::forrester;
  if (name == "allen_cahn") return MfFunction::allen_cahn;
  config_error("unknown function '" + name + "' (expected step|forrester|allen_cahn)");
}

MfMethod parse_mf_method(const std::string& name) {
  if (name == "bq") return MfMethod::uni_bq;
  if (name == "lmc") return MfMethod::lmc_bq;
  if (name == "pc") return MfMethod::pc_bq;
  config_error("unknown method '" + name + "' (expected bq|lmc|pc)");
}

void emit_report(const StudyReport& report, const std::string& out_dir, const std::string& stem,
                 bool timestamp) {
  namespace fs = std::filesystem;
  fs::create_directories(out_dir);
  const fs::path csv_path = fs::path(out_dir) / (stem + "_records.csv");
  const fs::path json_path = fs::path(out_dir) / (stem + "_summary.json");
  std::ofstream csv(csv_path);
  write_csv(report, csv, timestamp);
  std::ofstream js(json_path);
  write_summary_json(report, js);
  log_info("wrote " + csv_path.string() + " and " + json_path.string());
}

// --- Subcommands -------------------------------------------------------------

int cmd_multifidelity(const json& cfg, const std::string& out_dir,
                      std::optional<std::uint64_t> seed_flag, bool timing) {
  MultiFidelityConfig config;
  config.function = parse_mf_function(cfg.value("function", "step"));
  if (cfg.contains("methods")) {
    config.methods.clear();
    for (const auto& m : cfg["methods"]) config.methods.push_back(parse_mf_method(m));
  }
  if (cfg.contains("optimizer")) config.optimizer = parse_optimizer(cfg["optimizer"]);
  config.seed = seed_flag.value_or(cfg.value("seed", 0ULL));
  config.optimizer.seed = config.optimizer.seed ^ config.seed;
  config.allen_cahn_grid = cfg.value("allen_cahn_grid", config.allen_cahn_grid);
  config.record_timing = timing;

  StudyReport report = multifidelity_study(config);
  emit_report(report, out_dir, "multifidelity", timing);
  for (const auto& r : report.records) {
    std::cout << report.study << " method=" << r.method << " d=" << r.output
              << " abs_error=" << fmt17(r.abs_error) << " variance=" << fmt17(r.variance) << "\n";
  }
  return 0;
}

int cmd_illumination(const json& cfg, const std::string& out_dir,
                     std::optional<std::uint64_t> seed_flag, int threads, bool timing) {
  IlluminationConfig config;
  if (cfg.contains("outputs")) {
    config.output_counts.clear();
    for (const auto& d : cfg["outputs"]) config.output_counts.push_back(d.get<int>());
  }
  if (cfg.contains("n_schedule")) {
    config.n_schedule.clear();
    for (const auto& n : cfg["n_schedule"]) config.n_schedule.push_back(n.get<int>());
  }
  config.seeds = cfg.value("seeds", config.seeds);
  config.seed = seed_flag.value_or(cfg.value("seed", 0ULL));
  config.threads = threads;
  config.record_timing = timing;

  StudyReport report = illumination_study(config);
  emit_report(report, out_dir, "illumination", timing);
  for (const auto& s : report.slopes) {
    if (s.key.rfind("wce/", 0) == 0)
      std::cout << "illumination " << s.key << " slope=" << fmt17(s.fit.slope) << " +/- "
                << fmt17(s.fit.half_width) << "\n";
  }
  return 0;
}

int cmd_converge(const json& cfg, const std::string& out_dir,
                 std::optional<std::uint64_t> seed_flag, int threads, bool timing) {
  const std::string casename = cfg.value("case", "");
  std::vector<int> schedule{16, 32, 64, 128, 256, 512};
  if (cfg.contains("n_schedule")) {
    schedule.clear();
    for (const auto& n : cfg["n_schedule"]) schedule.push_back(n.get<int>());
  }
  const std::uint64_t seed = seed_flag.value_or(cfg.value("seed", 0ULL));
  const int seeds = cfg.value("seeds", 5);

  ConvergenceConfig config = [&]() {
    if (casename == "sphere") return sphere_rate_config(cfg.value("outputs", 5), schedule, seeds, seed);
    if (casename == "matern_grid")
      return matern_grid_rate_config(cfg.value("alpha", 1.5), schedule, seed);
    if (casename == "sum_kernel") return sum_kernel_rate_config(schedule, seed);
    if (casename == "misspecified") return misspecified_rate_config(schedule, seed);
    config_error("unknown case '" + casename +
                 "' (expected sphere|matern_grid|sum_kernel|misspecified)");
  }();
  if (cfg.contains("kernel")) config.kernel = parse_output_kernel(cfg["kernel"]);
  config.threads = threads;
  config.record_timing = timing;

  StudyReport report = convergence_study(config);
  emit_report(report, out_dir, "converge_" + casename, timing);
  for (const auto& s : report.slopes)
    std::cout << report.study << " " << s.key << " slope=" << fmt17(s.fit.slope) << " +/- "
              << fmt17(s.fit.half_width) << "\n";
  return 0;
}

int cmd_integrate(const json& cfg, std::optional<std::uint64_t> seed_flag) {
  MultiFidelityConfig config;
  config.function = parse_mf_function(cfg.value("function", "step"));
  if (cfg.contains("optimizer")) config.optimizer = parse_optimizer(cfg["optimizer"]);
  config.seed = seed_flag.value_or(cfg.value("seed", 0ULL));
  config.optimizer.seed = config.optimizer.seed ^ config.seed;
  const MfMethod method = parse_mf_method(cfg.value("method", "lmc"));

  IntegrateOutcome out = multifidelity_integrate(config, method);
  const char* labels[2] = {"high", "low"};
  for (int d = 0; d < 2; ++d) {
    const double two_sigma = 2.0 * std::sqrt(std::max(0.0, out.variance[d]));
    std::cout << labels[d] << ": " << fmt17(out.mean[d]) << " +/- " << fmt17(two_sigma)
              << " (reference " << fmt17(out.reference[d]) << ")\n";
  }
  return 0;
}

int cmd_selftest();

}  // namespace

int run(const std::vector<std::string>& args) {
  CLI::App app{"multi-output Bayesian quadrature experiments"};
  app.require_subcommand(1);

  std::string config_path;
  std::string out_dir = "out";
  std::optional<std::uint64_t> seed_flag;
  int threads = 1;
  bool timing = false;

  auto add_common = [&](CLI::App* cmd, bool needs_config) {
    auto* opt = cmd->add_option("--config", config_path, "JSON config path");
    if (needs_config) opt->required();
    cmd->add_option("--out", out_dir, "output directory");
    cmd->add_option("--seed", seed_flag, "seed override");
    cmd->add_option("--threads", threads, "worker cap (default 1, deterministic)");
    cmd->add_flag("--timing", timing, "record wall times (breaks byte-reproducibility)");
  };

  auto* c_int = app.add_subcommand("integrate", "single multi-fidelity posterior");
  auto* c_mf = app.add_subcommand("multifidelity", "paper's multi-fidelity table");
  auto* c_il = app.add_subcommand("illumination", "global illumination study");
  auto* c_cv = app.add_subcommand("converge", "convergence-rate study");
  auto* c_st = app.add_subcommand("selftest", "run built-in invariant checks");
  for (auto* cmd : {c_int, c_mf, c_il, c_cv}) add_common(cmd, true);
  add_common(c_st, false);

  std::vector<const char*> argv;
  argv.push_back("mobq");
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 1;
  }

  try {
    if (c_st->parsed()) return cmd_selftest();
    const json cfg = load_config(config_path);
    if (c_int->parsed()) return cmd_integrate(cfg, seed_flag);
    if (c_mf->parsed()) return cmd_multifidelity(cfg, out_dir, seed_flag, timing);
    if (c_il->parsed()) return cmd_illumination(cfg, out_dir, seed_flag, threads, timing);
    if (c_cv->parsed()) return cmd_converge(cfg, out_dir, seed_flag, threads, timing);
    return 1;
  } catch (const InvalidArgumentError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const InvalidDataError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const Error& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return 2;
  }
}

namespace {

int cmd_selftest() {
  int failures = 0;
  auto check = [&](const char* name, bool ok) {
    std::cout << (ok ? "PASS" : "FAIL") << " " << name << "\n";
    if (!ok) ++failures;
  };

  // Sphere closed-form identities against a Monte Carlo draw.
  {
    const auto k = ScalarKernel::sphere_sobolev32();
    const Measure sphere = Measure::uniform_sphere();
    Rng rng(41);
    const PointList xs = sample_measure(sphere, 2000, rng);
    Point x(3);
    x << 0.0, 0.0, 1.0;
    double mc = 0.0;
    for (const auto& w : xs) mc += scalar_eval(k, w, x);
    mc /= static_cast<double>(xs.size());
    const double closed = kernel_mean(k, sphere, x);
    check("sphere kernel mean (closed form vs Monte Carlo)",
          std::abs(closed - 4.0 / 3.0) < 1e-12 && std::abs(mc - closed) < 0.05);
  }

  // Kronecker and dense solves agree on a shared-design separable model.
  {
    Design design = Design::shared_design(equidistant_grid(12, 0.0, 1.0), 3);
    Eigen::MatrixXd a(3, 3);
    a << 1.0, 0.3, 0.1, 0.3, 1.2, 0.2, 0.1, 0.2, 0.8;
    const Eigen::MatrixXd b = a * a.transpose();
    const auto kernel = OutputKernel::separable(b, ScalarKernel::matern(1.5, 1.0, 0.3));
    GramFactor kf = factorize_structured(kernel, design);
    GramFactor df = factorize(assemble_gram(kernel, design));
    Eigen::VectorXd rhs = Eigen::VectorXd::LinSpaced(design.total_points(), -1.0, 1.0);
    const double diff = (kf.solve(rhs) - df.solve(rhs)).cwiseAbs().maxCoeff();
    check("kronecker path matches dense path", kf.is_kronecker() && diff < 1e-8);
  }

  // The quadrature rule reproduces kernel-mean test integrands exactly.
  {
    Rng rng(23);
    const Measure box = Measure::uniform_box(0.0, 1.0);
    PointList pts = sample_measure(box, 8, rng);
    Design design({pts, sample_measure(box, 6, rng)});
    const auto kernel = OutputKernel::lmc((Eigen::MatrixXd(2, 2) << 1.0, 0.4, 0.0, 0.9).finished(),
                                          ScalarKernel::squared_exponential(1.0, 0.4));
    Dataset data(design, Eigen::VectorXd::Zero(design.total_points()));
    BQModel model = fit(kernel, box, data);
    const Eigen::MatrixXd w = weights(model);
    // Integrating f(.) = (C(., x_j) e_dp)_d must give Pi[C(., x_j)]_{d,dp}.
    const auto entry = make_entry_evaluator(kernel);
    double worst = 0.0;
    int col = 0;
    for (int dp = 0; dp < 2; ++dp) {
      for (const auto& xj : design.points(dp)) {
        for (int d = 0; d < 2; ++d) {
          double applied = 0.0;
          int row = 0;
          for (int dq = 0; dq < 2; ++dq)
            for (const auto& xi : design.points(dq)) applied += w(row++, d) * entry(dq, dp, xi, xj);
          worst = std::max(worst, std::abs(applied - model.kernel_mean_block(d, col)));
        }
        ++col;
      }
    }
    check("weights reproduce representer integrands", worst < 1e-8);
  }

  // Analytic LML gradient against central finite differences.
  {
    Rng rng(29);
    const Measure box = Measure::uniform_box(0.0, 1.0);
    PointList pts = sample_measure(box, 7, rng);
    Design design = Design::shared_design(pts, 2);
    Eigen::VectorXd f(design.total_points());
    for (int i = 0; i < f.size(); ++i) f[i] = std::sin(3.0 * i) + 0.1 * i;
    Dataset data(design, f);
    const auto schema = OutputKernel::separable(
        (Eigen::MatrixXd(2, 2) << 1.0, 0.2, 0.2, 0.7).finished(),
        ScalarKernel::matern(2.5, 1.1, 0.35));
    const Eigen::VectorXd theta = pack_hypers(schema).theta;
    const Eigen::VectorXd g = grad_log_marginal(schema, theta, data, box).grad;
    double worst = 0.0;
    for (int c = 0; c < theta.size(); ++c) {
      const double h = 1e-6 * (1.0 + std::abs(theta[c]));
      Eigen::VectorXd tp = theta, tm = theta;
      tp[c] += h;
      tm[c] -= h;
      const double fd = (log_marginal(schema, tp, data, box) -
                         log_marginal(schema, tm, data, box)) / (2.0 * h);
      if (std::abs(g[c]) > 1e-8) worst = std::max(worst, std::abs(g[c] - fd) / std::abs(g[c]));
    }
    check("lml gradient matches finite differences", worst < 1e-5);
  }

  return failures == 0 ? 0 : 2;
}

}  // namespace

}  // namespace mobq::cli
