#pragma once

#include <cstdint>
#include <functional>
#include <ostream>
#include <string>
#include <vector>

#include "mobq/core.hpp"
#include "mobq/hyper.hpp"
#include "mobq/kernels.hpp"

namespace mobq {

// --- Reference integrals -----------------------------------------------------

enum class ReferenceMethod { closed_form, quadrature, qmc };

struct ReferenceIntegral {
  double value;
  ReferenceMethod method;
  double estimated_accuracy;  // doubling difference at convergence
};

// Ground-truth integral of f against the measure. Boxes use Gauss-Legendre
// doubling (supply breakpoints so each smooth piece converges spectrally);
// the sphere uses a Fibonacci equal-area average with a Richardson check.
ReferenceIntegral reference_integral(const std::function<double(const Point&)>& f,
                                     const Measure& measure, double accuracy_target,
                                     const std::vector<double>& breakpoints = {});

// Sphere mean of an integrand supported on {w : w . axis > 0} and smooth
// there (the illumination case); aligned Gauss-Legendre, far tighter than the
// generic Fibonacci route.
ReferenceIntegral sphere_cap_reference(const std::function<double(const Point&)>& f,
                                       const Point& axis, double accuracy_target);

// --- Reports -------------------------------------------------------------------

struct StudyRecord {
  std::string study;
  std::string method;
  int outputs = 0;        // D
  int output = 0;         // d, 1-based
  std::string channel;    // empty when not applicable
  int n = 0;
  std::uint64_t seed = 0;
  double abs_error = 0.0;
  double variance = 0.0;
  double wce = 0.0;
  double eta = 0.0;
  double wall_ms = 0.0;
};

struct SlopeFit {
  double slope;
  double intercept;
  double half_width;  // 2 x standard error of the slope
};

struct SlopeSummary {
  std::string key;  // e.g. "wce/D5/d1"
  SlopeFit fit;
};

struct StudyReport {
  std::string study;
  std::uint64_t seed = 0;
  std::vector<StudyRecord> records;
  std::vector<SlopeSummary> slopes;
  std::vector<std::string> notes;  // provenance: kernels, hyperparameter optima, references
};

// Ordinary least squares on (log N, log value); at least 4 strictly positive
// pairs required.
SlopeFit fit_loglog_slope(const std::vector<std::pair<double, double>>& pairs);

// CSV columns: study,method,D,d,channel,N,seed,abs_error,variance,wce,eta,wall_ms.
// The optional timestamp comment line is the only nondeterministic output.
void write_csv(const StudyReport& report, std::ostream& out, bool timestamp_header = true);
void write_summary_json(const StudyReport& report, std::ostream& out);

// --- Convergence studies ---------------------------------------------------------

struct IntegrandFamily {
  std::string name;
  std::function<double(int output, const Point& x)> eval;
  std::vector<double> reference;  // Pi[f_d]; empty disables error records
};

using DesignGenerator = std::function<Design(int n, Rng& rng)>;

DesignGenerator grid_design_generator(double a, double b, int outputs);
DesignGenerator iid_design_generator(const Measure& measure, int outputs, bool shared);

struct ConvergenceConfig {
  OutputKernel kernel;
  Measure measure;
  IntegrandFamily family;
  DesignGenerator designs;
  std::vector<int> n_schedule;
  int seeds = 1;  // 1 for deterministic designs
  std::uint64_t seed = 0;
  bool record_timing = false;
  int threads = 1;
};

// WCE and absolute error per (N, seed, output), slopes fitted on the
// log-median curves.
StudyReport convergence_study(const ConvergenceConfig& config);

// Canned setups shared by the CLI and the acceptance suite.
//
// Sphere rate: separable camera-covariance kernel with the Sobolev-3/2 sphere
// kernel, per-output independent IID designs, illumination red-channel
// integrands.
ConvergenceConfig sphere_rate_config(int outputs, std::vector<int> n_schedule, int seeds,
                                     std::uint64_t seed);
// Matern grids on [0, 1] with a smooth integrand (well-specified rates).
ConvergenceConfig matern_grid_rate_config(double alpha, std::vector<int> n_schedule,
                                          std::uint64_t seed);
// Sum of Matern-3/2 and Matern-5/2 parts; the rougher term dominates.
ConvergenceConfig sum_kernel_rate_config(std::vector<int> n_schedule, std::uint64_t seed);
// Matern-5/2 prior on the kink integrand |x - 0.47| (smoothness ~3/2).
ConvergenceConfig misspecified_rate_config(std::vector<int> n_schedule, std::uint64_t seed);

// --- Multi-fidelity study ----------------------------------------------------------

enum class MfFunction { step, forrester, allen_cahn };
enum class MfMethod { uni_bq, lmc_bq, pc_bq };

struct MultiFidelityConfig {
  MfFunction function = MfFunction::step;
  std::vector<MfMethod> methods{MfMethod::uni_bq, MfMethod::lmc_bq, MfMethod::pc_bq};
  OptimizerConfig optimizer;
  std::uint64_t seed = 0;
  int allen_cahn_grid = 401;
  bool record_timing = false;
};

// The paper's designs: 20 equidistant points with 1-based indices
// {4,10,11,14,17} evaluated at high fidelity (step/Forrester), integer points
// 0..10 with x in {2,5,8} high (Allen-Cahn). Output 1 is the high-fidelity
// target, output 2 the low-fidelity model. Uni-output BQ fits each fidelity
// on its own points only; hyperparameters by empirical Bayes throughout.
StudyReport multifidelity_study(const MultiFidelityConfig& config);

// One multi-fidelity fit with a single method; exposes the posterior itself
// (means and variances per fidelity, high first) rather than error records.
struct IntegrateOutcome {
  Eigen::VectorXd mean;        // per fidelity: [high, low]
  Eigen::VectorXd variance;
  Eigen::VectorXd reference;   // ground-truth integrals, same order
  double jitter = 0.0;
  std::vector<std::string> notes;
};
IntegrateOutcome multifidelity_integrate(const MultiFidelityConfig& config, MfMethod method);

// --- Global illumination study -------------------------------------------------------

struct IlluminationConfig {
  std::vector<int> output_counts{1, 2, 5};
  std::vector<int> n_schedule{16, 32, 64, 128, 256, 512};
  int seeds = 5;
  std::uint64_t seed = 0;
  double angular_step = 0.005 * 3.14159265358979323846;
  bool record_timing = false;
  int threads = 1;
};

// Per-output independent IID sphere designs; separable kernel with the
// camera covariance B and the Sobolev-3/2 sphere kernel. Errors and WCE per
// channel/output for each output count, plus the per-output Monte Carlo
// baseline (sample mean on that output's own points).
StudyReport illumination_study(const IlluminationConfig& config);

}  // namespace mobq
