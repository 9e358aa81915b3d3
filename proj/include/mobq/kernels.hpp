#pragma once

#include <functional>
#include <optional>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include <Eigen/Core>

#include "mobq/core.hpp"

namespace mobq {

// --- Scalar kernels ---------------------------------------------------------

// Matern with half-integer smoothness; the closed forms below replace Bessel
// evaluation. alpha must be one of {1/2, 3/2, 5/2}.
struct Matern {
  double alpha;
  double amplitude;    // lambda; kernel value at r = 0 is lambda^2
  double lengthscale;  // sigma
};

// lambda^2 exp(-r^2 / (2 sigma^2)). The exp(-r^2/sigma^2) convention is
// reachable by rescaling sigma by 1/sqrt(2).
struct SquaredExponential {
  double amplitude;
  double lengthscale;
};

// c(x,x') = 8/3 - ||x - x'||_2 on the unit sphere S^2. Its Legendre expansion
// 4/3 + sum_{l>=1} a_l P_l(cos theta) has a_l > 0 decaying like l^-3, so the
// kernel is strictly positive definite and its RKHS is norm-equivalent to the
// Sobolev space of smoothness 3/2 on S^2.
struct SphereSobolev32 {};

class ScalarKernel {
 public:
  static ScalarKernel matern(double alpha, double amplitude, double lengthscale);
  static ScalarKernel squared_exponential(double amplitude, double lengthscale);
  static ScalarKernel sphere_sobolev32();

  bool is_matern() const { return std::holds_alternative<Matern>(v_); }
  bool is_se() const { return std::holds_alternative<SquaredExponential>(v_); }
  bool is_sphere_sobolev() const { return std::holds_alternative<SphereSobolev32>(v_); }

  const std::variant<Matern, SquaredExponential, SphereSobolev32>& value() const { return v_; }

  int hyper_count() const;  // packed parameter count (log amplitude, log lengthscale)

 private:
  std::variant<Matern, SquaredExponential, SphereSobolev32> v_;
};

double scalar_eval(const ScalarKernel& k, const Point& x, const Point& y);

// Controls the numeric fallback used when no closed-form integral identity
// exists for a (kernel, measure) pair. Off by default so slow paths are
// explicit.
struct IdentityOptions {
  bool allow_quadrature_fallback = false;
  double abs_tol = 1e-10;
};

// Pi[c(., x)], the representer of integration.
double kernel_mean(const ScalarKernel& k, const Measure& pi, const Point& x,
                   const IdentityOptions& opts = {});

// PiPi[c], the double integral of the kernel.
double initial_error(const ScalarKernel& k, const Measure& pi, const IdentityOptions& opts = {});

// --- Matrix-valued kernels --------------------------------------------------

class OutputKernel;

// C(x,x') = B c(x,x') with B symmetric positive definite.
struct SeparableKernel {
  Eigen::MatrixXd B;
  ScalarKernel base;
};

// Linear model of coregionalization: B = A^T A (A is R x D, row i = latent i's
// loadings) plus an optional strictly positive diagonal nugget.
struct LmcKernel {
  Eigen::MatrixXd factors;  // R x D
  Eigen::VectorXd nugget;   // size D, or size 0 when absent
  ScalarKernel base;

  Eigen::MatrixXd induced_output_cov() const;  // A^T A + diag(nugget)
};

// Outputs modeled as Gaussian-blurred latent processes. With squared
// exponential blurs G^i_d(r) = blur_amplitude(i,d)^2 exp(-r^2/(2 blur_width(i,d)^2))
// and latent kernels c_i with (latent_amplitude(i), latent_width(i)), the double
// convolution collapses to a squared exponential per entry; see entry_se_params.
struct ProcessConvolutionKernel {
  Eigen::MatrixXd blur_amplitude;   // R x D
  Eigen::MatrixXd blur_width;       // R x D
  Eigen::VectorXd latent_amplitude; // R
  Eigen::VectorXd latent_width;     // R
  std::vector<ScalarKernel> output_kernels;  // per-output independent part c_{w_d}; empty when absent

  int latents() const { return static_cast<int>(blur_amplitude.rows()); }
  int outputs() const { return static_cast<int>(blur_amplitude.cols()); }

  // Squared exponential parameters (amplitude^2 and width) of latent i's
  // contribution to entry (d, d'):
  //   amp2  = la^2(i,d) la^2(i,d') la^2(i) 2 pi w(i,d) w(i,d') w(i) / sqrt(S)
  //   width = sqrt(S),  S = w(i,d)^2 + w(i,d')^2 + w(i)^2
  void entry_se_params(int latent, int d, int dp, double& amp2, double& width) const;
};

struct SumKernel {
  std::vector<OutputKernel> terms;
};

class OutputKernel {
 public:
  static OutputKernel separable(Eigen::MatrixXd B, ScalarKernel base);
  static OutputKernel lmc(Eigen::MatrixXd factors, ScalarKernel base,
                          Eigen::VectorXd nugget = Eigen::VectorXd());
  static OutputKernel process_convolution(Eigen::MatrixXd blur_amplitude,
                                          Eigen::MatrixXd blur_width,
                                          Eigen::VectorXd latent_amplitude,
                                          Eigen::VectorXd latent_width,
                                          std::vector<ScalarKernel> output_kernels = {});
  static OutputKernel sum(std::vector<OutputKernel> terms);

  int outputs() const;

  bool is_separable() const { return std::holds_alternative<SeparableKernel>(v_); }
  bool is_lmc() const { return std::holds_alternative<LmcKernel>(v_); }
  bool is_process_convolution() const { return std::holds_alternative<ProcessConvolutionKernel>(v_); }
  bool is_sum() const { return std::holds_alternative<SumKernel>(v_); }

  const std::variant<SeparableKernel, LmcKernel, ProcessConvolutionKernel, SumKernel>& value() const {
    return v_;
  }

  // (B, c) when the kernel is exactly B c(x,x'): Separable always, LMC only
  // with zero nugget. Drives the Kronecker fast path.
  std::optional<std::pair<Eigen::MatrixXd, ScalarKernel>> separable_form() const;

 private:
  std::variant<SeparableKernel, LmcKernel, ProcessConvolutionKernel, SumKernel> v_;
};

// C(x, x') as a D x D matrix.
Eigen::MatrixXd matrix_eval(const OutputKernel& K, const Point& x, const Point& y);

// Pi[C(., X)]: D x M, column block (d', j) holds the d-th components of the
// integrated kernel against x_{d',j}.
Eigen::MatrixXd mo_kernel_mean(const OutputKernel& K, const Measure& pi, const Design& design,
                               const IdentityOptions& opts = {});

// PiPi[C]: D x D, symmetric positive semidefinite.
Eigen::MatrixXd mo_initial_error(const OutputKernel& K, const Measure& pi,
                                 const IdentityOptions& opts = {});

// --- Hyperparameter packing --------------------------------------------------
//
// Packed layout (log-transformed where noted), per variant:
//   scalar base     : [log amplitude, log lengthscale]; SphereSobolev32 packs nothing
//   Separable       : lower triangle of chol(B) row-major, diagonal log-transformed; then base
//   LMC             : factors row-major (unconstrained); log nugget entries when present; then base
//   PC              : log blur_amplitude row-major, log blur_width row-major,
//                     log latent_amplitude, log latent_width; then each output kernel
//   Sum             : concatenation of the terms
struct HyperVector {
  Eigen::VectorXd theta;
  OutputKernel schema;  // structural prototype; shapes drive unpacking
};

HyperVector pack_hypers(const OutputKernel& K);
OutputKernel unpack_hypers(const OutputKernel& schema, const Eigen::VectorXd& theta);
int hyper_count(const OutputKernel& K);
std::vector<std::string> hyper_names(const OutputKernel& K);

// dC(x,x')/dtheta_i in packed coordinates, for every coordinate at once.
// Returns false when some coordinate lacks an analytic derivative (the caller
// is expected to fall back to finite differences).
bool matrix_eval_grad(const OutputKernel& K, const Point& x, const Point& y,
                      std::vector<Eigen::MatrixXd>& grads);

// Single-entry evaluator (C(x,x'))_{d d'} with per-variant state (induced B,
// process-convolution entry parameters) precomputed once. Avoids building a
// D x D matrix per Gram entry during assembly.
using EntryEvaluator = std::function<double(int d, int dp, const Point& x, const Point& y)>;
EntryEvaluator make_entry_evaluator(const OutputKernel& K);

}  // namespace mobq
