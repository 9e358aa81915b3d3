#include "mobq/hyper.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <optional>

#include "mobq/errors.hpp"

namespace mobq {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

struct FactorizedState {
  Eigen::MatrixXd gram;  // unregularized
  GramFactor factor;
};

// Assembles and factorizes for a candidate theta; nullopt when the candidate
// is unusable (non-finite parameters or no rung factorizes).
std::optional<FactorizedState> try_factorize(const OutputKernel& schema,
                                             const Eigen::VectorXd& theta, const Design& design,
                                             const JitterPolicy& policy) {
  if (!theta.allFinite()) return std::nullopt;
  try {
    OutputKernel k = unpack_hypers(schema, theta);
    Eigen::MatrixXd gram = assemble_gram(k, design);
    if (!gram.allFinite()) return std::nullopt;
    GramFactor factor = factorize(gram, policy);
    return FactorizedState{std::move(gram), std::move(factor)};
  } catch (const NotPositiveDefiniteError&) {
    return std::nullopt;
  } catch (const InvalidArgumentError&) {
    return std::nullopt;
  }
}

double lml_from_state(const FactorizedState& state, const Eigen::VectorXd& values) {
  const int m = static_cast<int>(values.size());
  const Eigen::VectorXd alpha = state.factor.solve(values);
  return -0.5 * values.dot(alpha) - 0.5 * state.factor.log_det() -
         0.5 * m * std::log(2.0 * std::numbers::pi);
}

}  // namespace

LmlResult log_marginal_detail(const OutputKernel& schema, const Eigen::VectorXd& theta,
                              const Dataset& dataset, const Measure& measure,
                              const JitterPolicy& policy) {
  (void)measure;
  auto state = try_factorize(schema, theta, dataset.design, policy);
  if (!state) return {kNegInf, 0.0};
  const double value = lml_from_state(*state, dataset.values);
  if (!std::isfinite(value)) return {kNegInf, state->factor.jitter()};
  return {value, state->factor.jitter()};
}

double log_marginal(const OutputKernel& schema, const Eigen::VectorXd& theta,
                    const Dataset& dataset, const Measure& measure, const JitterPolicy& policy) {
  return log_marginal_detail(schema, theta, dataset, measure, policy).value;
}

GradResult grad_log_marginal(const OutputKernel& schema, const Eigen::VectorXd& theta,
                             const Dataset& dataset, const Measure& measure,
                             const JitterPolicy& policy) {
  const int l = static_cast<int>(theta.size());
  auto state = try_factorize(schema, theta, dataset.design, policy);
  if (!state)
    throw OptimizationFailedError("grad_log_marginal: Gram not factorizable at this theta");

  const Design& design = dataset.design;
  const int m = design.total_points();
  const Eigen::VectorXd alpha = state->factor.solve(dataset.values);
  OutputKernel kernel = unpack_hypers(schema, theta);

  // Assemble dC/dtheta_i for every coordinate in one pass over point pairs.
  std::vector<Eigen::MatrixXd> dgram(l, Eigen::MatrixXd::Zero(m, m));
  std::vector<Eigen::MatrixXd> blocks;
  bool analytic = true;
  const int D = design.outputs();
  for (int d = 0; d < D && analytic; ++d) {
    const int off_d = design.block_offset(d);
    const auto& xs = design.points(d);
    for (int dp = d; dp < D; ++dp) {
      const int off_dp = design.block_offset(dp);
      const auto& ys = design.points(dp);
      for (std::size_t i = 0; i < xs.size(); ++i) {
        const std::size_t j0 = (d == dp) ? i : 0;
        for (std::size_t j = j0; j < ys.size(); ++j) {
          if (!matrix_eval_grad(kernel, xs[i], ys[j], blocks)) {
            analytic = false;
            break;
          }
          for (int c = 0; c < l; ++c) {
            dgram[c](off_d + static_cast<int>(i), off_dp + static_cast<int>(j)) = blocks[c](d, dp);
            dgram[c](off_dp + static_cast<int>(j), off_d + static_cast<int>(i)) = blocks[c](d, dp);
          }
        }
        if (!analytic) break;
      }
      if (!analytic) break;
    }
  }

  GradResult result;
  result.grad.resize(l);

  if (analytic) {
    // The ladder's eta scales with trace(C)/m, so when a nonzero rung was
    // selected the regularized matrix inherits a theta-dependence through the
    // trace; account for it so finite differences agree.
    const double eta = state->factor.jitter();
    const double rel = eta > 0.0 ? eta / (state->gram.trace() / m) : 0.0;
    for (int c = 0; c < l; ++c) {
      Eigen::MatrixXd dg = dgram[c];
      if (rel > 0.0) dg.diagonal().array() += rel * dgram[c].trace() / m;
      const double data_term = 0.5 * alpha.dot(dg * alpha);
      const double trace_term = 0.5 * state->factor.solve(dg).trace();
      result.grad[c] = data_term - trace_term;
    }
    return result;
  }

  // Central finite differences for kernels without analytic derivatives.
  result.used_finite_differences = true;
  for (int c = 0; c < l; ++c) {
    const double h = 1e-6 * (1.0 + std::abs(theta[c]));
    Eigen::VectorXd tp = theta, tm = theta;
    tp[c] += h;
    tm[c] -= h;
    const double fp = log_marginal(schema, tp, dataset, measure, policy);
    const double fm = log_marginal(schema, tm, dataset, measure, policy);
    result.grad[c] = (fp - fm) / (2.0 * h);
  }
  return result;
}

std::vector<std::pair<double, double>> default_init_ranges(const OutputKernel& schema,
                                                           const Dataset& dataset) {
  const auto names = hyper_names(schema);

  // Value scale.
  const Eigen::VectorXd& v = dataset.values;
  const double mean = v.mean();
  double sd = std::sqrt((v.array() - mean).square().sum() / std::max<int>(1, v.size() - 1));
  if (!(sd > 1e-12)) sd = 1.0;

  // Pairwise-distance quantiles over the pooled design.
  std::vector<double> dists;
  PointList pool;
  for (int d = 0; d < dataset.design.outputs(); ++d)
    for (const auto& p : dataset.design.points(d)) pool.push_back(p);
  for (std::size_t i = 0; i < pool.size(); ++i)
    for (std::size_t j = i + 1; j < pool.size(); ++j) dists.push_back((pool[i] - pool[j]).norm());
  std::sort(dists.begin(), dists.end());
  auto quantile = [&](double q) {
    if (dists.empty()) return 1.0;
    const std::size_t idx = std::min(dists.size() - 1, static_cast<std::size_t>(q * dists.size()));
    return std::max(dists[idx], 1e-8);
  };
  const double len_lo = quantile(0.25);
  const double len_hi = quantile(0.75);

  std::vector<std::pair<double, double>> ranges;
  ranges.reserve(names.size());
  for (const auto& name : names) {
    const bool is_len = name.find("lengthscale") != std::string::npos ||
                        name.find("width") != std::string::npos;
    const bool is_amp = name.find("amplitude") != std::string::npos ||
                        name.find("amp") != std::string::npos ||
                        name.find("log_L") != std::string::npos;
    const bool is_nugget = name.find("nugget") != std::string::npos;
    if (is_len) {
      ranges.emplace_back(std::log(1e-2 * len_lo), std::log(1e2 * len_hi));
    } else if (is_nugget) {
      ranges.emplace_back(std::log(1e-4 * sd * sd), std::log(1e-1 * sd * sd));
    } else if (is_amp) {
      ranges.emplace_back(std::log(1e-2 * sd), std::log(1e2 * sd));
    } else {
      // Unconstrained loadings (LMC factors, off-diagonal Cholesky entries).
      ranges.emplace_back(-2.0 * sd, 2.0 * sd);
    }
  }
  return ranges;
}

OptimizeResult optimize(const OutputKernel& schema, const Dataset& dataset, const Measure& measure,
                        const OptimizerConfig& config, const JitterPolicy& policy) {
  if (config.restarts < 1 || config.max_iters < 1)
    throw InvalidArgumentError("optimize: restarts and max_iters must be positive");
  const int l = hyper_count(schema);
  const Eigen::VectorXd theta0 = pack_hypers(schema).theta;

  auto ranges = config.init_ranges.empty() ? default_init_ranges(schema, dataset)
                                           : config.init_ranges;
  if (static_cast<int>(ranges.size()) != l)
    throw InvalidArgumentError("optimize: init_ranges size must equal the packed length");

  std::vector<bool> frozen(l, false);
  for (int idx : config.frozen) {
    if (idx < 0 || idx >= l) throw InvalidArgumentError("optimize: frozen index out of range");
    frozen[idx] = true;
  }

  auto objective = [&](const Eigen::VectorXd& t) {
    return log_marginal(schema, t, dataset, measure, policy);
  };

  Rng rng(config.seed);
  OptimizeResult best;
  best.lml = kNegInf;
  bool any_accepted = false;

  for (int r = 0; r < config.restarts; ++r) {
    Eigen::VectorXd theta = theta0;
    if (r > 0) {
      Rng stream = rng.split(static_cast<std::uint64_t>(r));
      for (int c = 0; c < l; ++c) {
        if (!frozen[c]) theta[c] = stream.uniform(ranges[c].first, ranges[c].second);
      }
    }

    RestartRecord record;
    record.rejected = false;
    std::vector<double> trace;
    double fval = objective(theta);
    if (!std::isfinite(fval)) {
      record.theta = theta;
      record.lml = kNegInf;
      record.iterations = 0;
      record.rejected = true;
      best.restarts.push_back(std::move(record));
      continue;
    }
    trace.push_back(fval);

    int iter = 0;
    for (; iter < config.max_iters; ++iter) {
      Eigen::VectorXd g = grad_log_marginal(schema, theta, dataset, measure, policy).grad;
      for (int c = 0; c < l; ++c)
        if (frozen[c]) g[c] = 0.0;
      const double gnorm = g.lpNorm<Eigen::Infinity>();
      if (gnorm < config.grad_tol) break;

      // Backtracking line search along the gradient (ascent).
      double step = config.line_search.initial_step;
      const double g2 = g.squaredNorm();
      bool moved = false;
      while (step >= config.line_search.min_step) {
        const Eigen::VectorXd cand = theta + step * g;
        const double fcand = objective(cand);
        if (std::isfinite(fcand) &&
            fcand >= fval + config.line_search.sufficient_increase * step * g2) {
          theta = cand;
          fval = fcand;
          moved = true;
          break;
        }
        step *= config.line_search.shrink;
      }
      if (!moved) break;
      trace.push_back(fval);
    }

    record.theta = theta;
    record.lml = fval;
    record.iterations = iter;
    if (!any_accepted || fval > best.lml) {
      best.theta = theta;
      best.lml = fval;
      best.trace = trace;
      any_accepted = true;
    }
    best.restarts.push_back(std::move(record));
  }

  if (!any_accepted)
    throw OptimizationFailedError("optimize: every restart was rejected (lml = -inf everywhere)");
  return best;
}

}  // namespace mobq
