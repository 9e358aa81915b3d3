#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "mobq/core.hpp"
#include "mobq/kernels.hpp"
#include "mobq/linalg.hpp"

namespace mobq {

struct LineSearchConfig {
  double initial_step = 1.0;
  double shrink = 0.5;
  double sufficient_increase = 1e-4;  // Armijo constant
  double min_step = 1e-12;
};

struct OptimizerConfig {
  int restarts = 10;
  int max_iters = 200;
  LineSearchConfig line_search;
  double grad_tol = 1e-5;  // infinity norm
  // Initialization ranges per packed coordinate (inclusive, already in packed
  // coordinates, i.e. log-space for log-transformed fields). Empty selects
  // data-driven defaults; see default_init_ranges.
  std::vector<std::pair<double, double>> init_ranges;
  std::uint64_t seed = 0;
  // Packed coordinates held at their schema values (gradient zeroed).
  std::vector<int> frozen;
};

struct LmlResult {
  double value;   // -inf sentinel when no jitter rung factorizes
  double jitter;  // eta actually used
};

// log p(f(X) | X, theta) = -1/2 f^T C^{-1} f - 1/2 log|C| - (M/2) log(2 pi),
// with C = C(X,X) + eta I from the same jitter ladder the posterior uses.
// The measure is carried for interface symmetry with fit(); the likelihood
// itself does not depend on it.
LmlResult log_marginal_detail(const OutputKernel& schema, const Eigen::VectorXd& theta,
                              const Dataset& dataset, const Measure& measure,
                              const JitterPolicy& policy = {});
double log_marginal(const OutputKernel& schema, const Eigen::VectorXd& theta,
                    const Dataset& dataset, const Measure& measure,
                    const JitterPolicy& policy = {});

struct GradResult {
  Eigen::VectorXd grad;
  bool used_finite_differences = false;
};

// Gradient in packed (log) coordinates:
//   d lml / d theta_i = 1/2 alpha^T (dC/dtheta_i) alpha - 1/2 tr(C^{-1} dC/dtheta_i).
// Coordinates without an analytic dC/dtheta_i fall back to central finite
// differences with step 1e-6 (1 + |theta_i|), flagged in the result.
GradResult grad_log_marginal(const OutputKernel& schema, const Eigen::VectorXd& theta,
                             const Dataset& dataset, const Measure& measure,
                             const JitterPolicy& policy = {});

struct RestartRecord {
  Eigen::VectorXd theta;
  double lml;
  int iterations;
  bool rejected;  // initial point already had lml = -inf
};

struct OptimizeResult {
  Eigen::VectorXd theta;      // best across restarts
  double lml;
  std::vector<double> trace;  // winning restart's per-iteration lml (non-decreasing)
  std::vector<RestartRecord> restarts;
};

// Multi-start gradient ascent with backtracking line search in the packed
// (unconstrained) coordinates. Deterministic given config.seed; restart 0
// starts from the schema's own values.
OptimizeResult optimize(const OutputKernel& schema, const Dataset& dataset, const Measure& measure,
                        const OptimizerConfig& config, const JitterPolicy& policy = {});

// Log-uniform ranges centered on data heuristics: amplitudes from the value
// standard deviation, lengthscales from pairwise-distance quantiles.
std::vector<std::pair<double, double>> default_init_ranges(const OutputKernel& schema,
                                                           const Dataset& dataset);

}  // namespace mobq
