#include "mobq/linalg.hpp"

#include <cmath>
#include <limits>

#include <Eigen/Eigenvalues>

#include "mobq/errors.hpp"

namespace mobq {

namespace {

double log_det_from_llt(const Eigen::LLT<Eigen::MatrixXd>& llt) {
  return 2.0 * llt.matrixLLT().diagonal().array().log().sum();
}

// One ladder pass over G + eta * (trace/M) * I. Returns the first rung that
// factorizes; throws with a min-eigenvalue estimate if none does. A pivot
// ratio bound rejects numerically singular "successes", whose solves (and
// hence log-likelihoods) would be garbage.
std::pair<Eigen::LLT<Eigen::MatrixXd>, double> ladder_factorize(const Eigen::MatrixXd& gram,
                                                                const JitterPolicy& policy) {
  const int m = static_cast<int>(gram.rows());
  const double scale = gram.trace() / m;
  for (double rung : policy.ladder) {
    const double eta = rung * scale;
    Eigen::MatrixXd reg = gram;
    reg.diagonal().array() += eta;
    Eigen::LLT<Eigen::MatrixXd> llt(reg);
    if (llt.info() != Eigen::Success || !llt.matrixLLT().allFinite()) continue;
    const auto diag = llt.matrixLLT().diagonal();
    const double dmin = diag.minCoeff();
    const double dmax = diag.maxCoeff();
    if (dmin <= 0.0 ||
        dmin * dmin <= m * std::numeric_limits<double>::epsilon() * dmax * dmax)
      continue;
    return {std::move(llt), eta};
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(gram, Eigen::EigenvaluesOnly);
  const double min_eig = es.eigenvalues().minCoeff();
  throw NotPositiveDefiniteError("factorize: all jitter rungs failed", min_eig);
}

}  // namespace

Eigen::MatrixXd GramFactor::solve(const Eigen::MatrixXd& rhs) const {
  if (rhs.rows() != size_) throw DimensionMismatchError("GramFactor::solve: rhs row count");
  if (!kronecker_) return dense_.solve(rhs);
  Eigen::MatrixXd out(size_, rhs.cols());
  for (Eigen::Index c = 0; c < rhs.cols(); ++c) {
    // Output-major stacking means vec = kron(B, G) x with x reshaped N x D
    // column-major, so solving is G^{-1} Y B^{-1} on the reshaped matrix.
    Eigen::Map<const Eigen::MatrixXd> y(rhs.col(c).data(), kron_n_, kron_d_);
    Eigen::MatrixXd t = kron_c_.solve(y);
    t = kron_b_.solve(t.transpose()).transpose();
    Eigen::Map<Eigen::MatrixXd>(out.col(c).data(), kron_n_, kron_d_) = t;
  }
  return out;
}

double GramFactor::log_det() const {
  if (!kronecker_) return log_det_from_llt(dense_);
  return kron_n_ * log_det_from_llt(kron_b_) + kron_d_ * log_det_from_llt(kron_c_);
}

Eigen::MatrixXd GramFactor::reconstruct() const {
  if (!kronecker_) {
    const Eigen::MatrixXd l = dense_.matrixL();
    return l * l.transpose();
  }
  const Eigen::MatrixXd lb = kron_b_.matrixL();
  const Eigen::MatrixXd lc = kron_c_.matrixL();
  const Eigen::MatrixXd b = lb * lb.transpose();
  const Eigen::MatrixXd c = lc * lc.transpose();
  Eigen::MatrixXd full(size_, size_);
  for (int d = 0; d < kron_d_; ++d)
    for (int dp = 0; dp < kron_d_; ++dp)
      full.block(d * kron_n_, dp * kron_n_, kron_n_, kron_n_) = b(d, dp) * c;
  return full;
}

Eigen::MatrixXd scalar_gram(const ScalarKernel& k, const PointList& points) {
  const int n = static_cast<int>(points.size());
  Eigen::MatrixXd g(n, n);
  for (int i = 0; i < n; ++i) {
    for (int j = i; j < n; ++j) {
      g(i, j) = scalar_eval(k, points[i], points[j]);
      g(j, i) = g(i, j);
    }
  }
  return g;
}

Eigen::MatrixXd assemble_gram(const OutputKernel& K, const Design& design) {
  if (K.outputs() != design.outputs())
    throw DimensionMismatchError("assemble_gram: kernel/design output mismatch");
  const int m = design.total_points();
  const auto entry = make_entry_evaluator(K);
  Eigen::MatrixXd g(m, m);
  const int D = design.outputs();
  for (int d = 0; d < D; ++d) {
    const auto& xs = design.points(d);
    const int off_d = design.block_offset(d);
    for (int dp = d; dp < D; ++dp) {
      const auto& ys = design.points(dp);
      const int off_dp = design.block_offset(dp);
      for (std::size_t i = 0; i < xs.size(); ++i) {
        const std::size_t j0 = (d == dp) ? i : 0;
        for (std::size_t j = j0; j < ys.size(); ++j) {
          const double v = entry(d, dp, xs[i], ys[j]);
          g(off_d + static_cast<int>(i), off_dp + static_cast<int>(j)) = v;
          g(off_dp + static_cast<int>(j), off_d + static_cast<int>(i)) = v;
        }
      }
    }
  }
  return g;
}

GramFactor factorize(const Eigen::MatrixXd& gram, const JitterPolicy& policy) {
  if (gram.rows() != gram.cols()) throw InvalidArgumentError("factorize: matrix must be square");
  if (!gram.isApprox(gram.transpose(), 1e-10))
    throw InvalidArgumentError("factorize: matrix must be symmetric");
  GramFactor f;
  f.size_ = static_cast<int>(gram.rows());
  auto [llt, eta] = ladder_factorize(gram, policy);
  f.dense_ = std::move(llt);
  f.jitter_ = eta;
  return f;
}

GramFactor factorize_structured(const OutputKernel& K, const Design& design,
                                const JitterPolicy& policy) {
  const auto sep = K.separable_form();
  if (sep && design.shared()) {
    const auto& [B, base] = *sep;
    // B must factorize cleanly on its own; otherwise use the dense route so
    // the ladder regularizes the full Gram.
    Eigen::LLT<Eigen::MatrixXd> llt_b(B);
    if (llt_b.info() == Eigen::Success && llt_b.matrixLLT().diagonal().minCoeff() > 0.0) {
      const Eigen::MatrixXd cg = scalar_gram(base, design.points(0));
      GramFactor f;
      f.kronecker_ = true;
      f.kron_d_ = design.outputs();
      f.kron_n_ = design.count(0);
      f.size_ = design.total_points();
      f.kron_b_ = std::move(llt_b);
      auto [llt_c, eta] = ladder_factorize(cg, policy);
      f.kron_c_ = std::move(llt_c);
      f.jitter_ = eta;
      return f;
    }
  }
  return factorize(assemble_gram(K, design), policy);
}

}  // namespace mobq
