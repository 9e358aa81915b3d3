#pragma once

#include <Eigen/Core>

#include "mobq/core.hpp"
#include "mobq/kernels.hpp"
#include "mobq/linalg.hpp"

namespace mobq {

// Fitted GP(0, C) state: factorized Gram plus the precomputed integral blocks
// Pi[C(., X)] (D x M) and PiPi[C] (D x D). Immutable after fit.
struct BQModel {
  OutputKernel kernel;
  Measure measure;
  Design design;
  GramFactor factor;
  Eigen::MatrixXd kernel_mean_block;    // D x M
  Eigen::MatrixXd initial_error_block;  // D x D
};

// Joint Gaussian posterior over the D integrals.
struct BQPosterior {
  Eigen::VectorXd mean;     // D
  Eigen::MatrixXd cov;      // D x D
  Eigen::MatrixXd weights;  // M x D, column d = weights for output d's integral
  double jitter_used = 0.0;
};

BQModel fit(const OutputKernel& kernel, const Measure& measure, const Dataset& dataset,
            const IdentityOptions& opts = {}, const JitterPolicy& policy = {});

BQPosterior integral_posterior(const BQModel& model, const Dataset& dataset);

// Quadrature weight matrix W = (Pi[C(., X)] C(X,X)^{-1})^T; independent of f.
Eigen::MatrixXd weights(const BQModel& model);

Eigen::VectorXd predict_mean(const BQModel& model, const Dataset& dataset, const Point& x);
Eigen::MatrixXd predict_cov(const BQModel& model, const Point& x, const Point& y);

// sqrt of the posterior variance of output d. Values in [-1e-10, 0) clamp to
// zero; anything lower indicates a broken factorization and throws.
double worst_case_error(const BQPosterior& posterior, int d);

// Worst-case error of an arbitrary weight matrix for output d, from the
// quadratic form w^T C(X,X) w - 2 (Pi[C(.,X)] w)_d + PiPi[C]_dd evaluated with
// the exact (unregularized) Gram. Used by optimality checks.
double wce_of_weights(const BQModel& model, const Eigen::MatrixXd& weight_matrix, int d);

}  // namespace mobq
