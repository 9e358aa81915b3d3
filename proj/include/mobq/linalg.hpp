#pragma once

#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Core>

#include "mobq/core.hpp"
#include "mobq/kernels.hpp"

namespace mobq {

// Tikhonov ladder, each rung scaled by the average Gram diagonal (trace/M) so
// regularization is invariant to kernel amplitude.
struct JitterPolicy {
  std::vector<double> ladder{0.0, 1e-12, 1e-10, 1e-8, 1e-6};
};

// Cholesky factorization of the regularized Gram. Dense holds the factor of
// C(X,X) + eta I; Kronecker holds separate factors of B and c(X,X) + eta I
// (the regularized Gram is then B kron (c(X,X) + eta I)).
class GramFactor {
 public:
  bool is_kronecker() const { return kronecker_; }
  double jitter() const { return jitter_; }
  int size() const { return size_; }

  // (regularized Gram)^{-1} rhs
  Eigen::MatrixXd solve(const Eigen::MatrixXd& rhs) const;
  double log_det() const;

  // Materializes the regularized Gram; intended for tests and diagnostics.
  Eigen::MatrixXd reconstruct() const;

 private:
  friend GramFactor factorize(const Eigen::MatrixXd&, const JitterPolicy&);
  friend GramFactor factorize_structured(const OutputKernel&, const Design&, const JitterPolicy&);

  bool kronecker_ = false;
  double jitter_ = 0.0;
  int size_ = 0;
  Eigen::LLT<Eigen::MatrixXd> dense_;
  Eigen::LLT<Eigen::MatrixXd> kron_b_;
  Eigen::LLT<Eigen::MatrixXd> kron_c_;
  int kron_n_ = 0;
  int kron_d_ = 0;
};

// Block Gram matrix in output-major ordering: block (d, d') holds
// (C(x, x'))_{d d'} over X_d x X_{d'}.
Eigen::MatrixXd assemble_gram(const OutputKernel& K, const Design& design);

// Scalar Gram c(X, X) of a single point list.
Eigen::MatrixXd scalar_gram(const ScalarKernel& k, const PointList& points);

GramFactor factorize(const Eigen::MatrixXd& gram, const JitterPolicy& policy = {});

// Kronecker route when the kernel is exactly B c(x,x') (Separable, or LMC with
// zero nugget) and the design is shared; dense otherwise. Mixed designs break
// the Kronecker structure.
GramFactor factorize_structured(const OutputKernel& K, const Design& design,
                                const JitterPolicy& policy = {});

inline Eigen::MatrixXd solve(const GramFactor& factor, const Eigen::MatrixXd& rhs) {
  return factor.solve(rhs);
}

}  // namespace mobq
