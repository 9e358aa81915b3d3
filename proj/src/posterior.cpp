#include "mobq/posterior.hpp"

#include <cmath>

#include <Eigen/Eigenvalues>

#include "mobq/errors.hpp"

namespace mobq {

namespace {

constexpr double kVarianceClamp = -1e-10;

void check_same_design(const Design& a, const Design& b) {
  if (a.outputs() != b.outputs() || a.total_points() != b.total_points())
    throw DimensionMismatchError("dataset design does not match the fitted model");
  for (int d = 0; d < a.outputs(); ++d) {
    if (a.count(d) != b.count(d))
      throw DimensionMismatchError("dataset design does not match the fitted model");
    for (int i = 0; i < a.count(d); ++i) {
      if (a.points(d)[i] != b.points(d)[i])
        throw DimensionMismatchError("dataset design does not match the fitted model");
    }
  }
}

// D x M cross-kernel block C(x, X).
Eigen::MatrixXd cross_block(const OutputKernel& kernel, const Design& design, const Point& x) {
  const int D = design.outputs();
  Eigen::MatrixXd cx(D, design.total_points());
  const auto entry = make_entry_evaluator(kernel);
  int col = 0;
  for (int dp = 0; dp < D; ++dp) {
    for (const auto& xj : design.points(dp)) {
      for (int d = 0; d < D; ++d) cx(d, col) = entry(d, dp, x, xj);
      ++col;
    }
  }
  return cx;
}

}  // namespace

BQModel fit(const OutputKernel& kernel, const Measure& measure, const Dataset& dataset,
            const IdentityOptions& opts, const JitterPolicy& policy) {
  GramFactor factor = factorize_structured(kernel, dataset.design, policy);
  Eigen::MatrixXd z = mo_kernel_mean(kernel, measure, dataset.design, opts);
  Eigen::MatrixXd e0 = mo_initial_error(kernel, measure, opts);
  return BQModel{kernel, measure, dataset.design, std::move(factor), std::move(z), std::move(e0)};
}

BQPosterior integral_posterior(const BQModel& model, const Dataset& dataset) {
  check_same_design(model.design, dataset.design);

  Eigen::MatrixXd w = model.factor.solve(model.kernel_mean_block.transpose());  // M x D
  Eigen::VectorXd mean = w.transpose() * dataset.values;
  Eigen::MatrixXd cov = model.initial_error_block - model.kernel_mean_block * w;
  cov = 0.5 * (cov + cov.transpose()).eval();

  const double max_diag = cov.diagonal().maxCoeff();
  if (cov.diagonal().minCoeff() < kVarianceClamp)
    throw InternalConsistencyError("integral_posterior: variance below the negative clamp");
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(cov, Eigen::EigenvaluesOnly);
  // Absolute 1e-12 slack keeps near-zero covariances (exact interpolation) valid.
  if (es.eigenvalues().minCoeff() < -1e-8 * std::max(max_diag, 0.0) - 1e-12)
    throw InternalConsistencyError("integral_posterior: covariance is not PSD within tolerance");

  return BQPosterior{std::move(mean), std::move(cov), std::move(w), model.factor.jitter()};
}

Eigen::MatrixXd weights(const BQModel& model) {
  return model.factor.solve(model.kernel_mean_block.transpose());
}

Eigen::VectorXd predict_mean(const BQModel& model, const Dataset& dataset, const Point& x) {
  check_same_design(model.design, dataset.design);
  const Eigen::MatrixXd cx = cross_block(model.kernel, model.design, x);
  return cx * model.factor.solve(dataset.values);
}

Eigen::MatrixXd predict_cov(const BQModel& model, const Point& x, const Point& y) {
  const Eigen::MatrixXd cx = cross_block(model.kernel, model.design, x);
  const Eigen::MatrixXd cy = cross_block(model.kernel, model.design, y);
  return matrix_eval(model.kernel, x, y) - cx * model.factor.solve(cy.transpose());
}

double worst_case_error(const BQPosterior& posterior, int d) {
  if (d < 0 || d >= posterior.cov.rows())
    throw InvalidArgumentError("worst_case_error: output index out of range");
  const double v = posterior.cov(d, d);
  if (v < kVarianceClamp)
    throw InternalConsistencyError("worst_case_error: variance below the negative clamp");
  return std::sqrt(std::max(v, 0.0));
}

double wce_of_weights(const BQModel& model, const Eigen::MatrixXd& weight_matrix, int d) {
  if (weight_matrix.rows() != model.design.total_points() ||
      weight_matrix.cols() != model.design.outputs())
    throw DimensionMismatchError("wce_of_weights: weight matrix must be M x D");
  if (d < 0 || d >= model.design.outputs())
    throw InvalidArgumentError("wce_of_weights: output index out of range");
  const Eigen::MatrixXd gram = assemble_gram(model.kernel, model.design);
  const Eigen::VectorXd wd = weight_matrix.col(d);
  const double quad = wd.dot(gram * wd);
  const double lin = (model.kernel_mean_block * wd)(d);
  const double e2 = model.initial_error_block(d, d) - 2.0 * lin + quad;
  return std::sqrt(std::max(e2, 0.0));
}

}  // namespace mobq
