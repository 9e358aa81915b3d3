#include "mobq/kernels.hpp"

#include <cmath>
#include <numbers>
#include <type_traits>

#include <Eigen/Cholesky>

#include "mobq/errors.hpp"
#include "mobq/quadrature.hpp"

namespace mobq {

namespace {

constexpr double kSphereNormTol = 1e-8;

void check_on_sphere(const Point& x) {
  if (x.size() != 3 || std::abs(x.norm() - 1.0) > kSphereNormTol)
    throw DomainError("SphereSobolev32: input must be a unit vector in R^3");
}

double matern_scale(double alpha, double lengthscale) {
  if (alpha == 0.5) return 1.0 / lengthscale;
  if (alpha == 1.5) return std::sqrt(3.0) / lengthscale;
  return std::sqrt(5.0) / lengthscale;  // alpha == 2.5
}

// Unit-amplitude Matern profile at distance r >= 0.
double matern_profile(double alpha, double beta, double r) {
  const double v = beta * r;
  const double e = std::exp(-v);
  if (alpha == 0.5) return e;
  if (alpha == 1.5) return (1.0 + v) * e;
  return (1.0 + v + v * v / 3.0) * e;
}

// One-sided integral int_0^U of the unit-amplitude Matern profile.
double matern_one_sided(double alpha, double beta, double U) {
  const double v = beta * U;
  const double e = std::exp(-v);
  if (alpha == 0.5) return (1.0 - e) / beta;
  if (alpha == 1.5) return (2.0 - (v + 2.0) * e) / beta;
  return (8.0 - (v * v + 5.0 * v + 8.0) * e) / (3.0 * beta);
}

// Signed antiderivative of the even profile: G(u) = sign(u) * int_0^|u|.
double matern_signed(double alpha, double beta, double u) {
  const double a = matern_one_sided(alpha, beta, std::abs(u));
  return u >= 0.0 ? a : -a;
}

// (2/L^2) int_0^L (L - u) profile(u) du, the double box average of a
// stationary kernel over [a, a+L]^2. Series branches avoid the small-v
// cancellation.
double matern_box_double_average(double alpha, double beta, double L) {
  const double v = beta * L;
  if (alpha == 0.5) {
    if (v < 1e-3) return 1.0 - v / 3.0 + v * v / 12.0 - v * v * v / 60.0;
    return 2.0 * (v + std::expm1(-v)) / (v * v);
  }
  if (alpha == 1.5) {
    if (v < 1e-3) return 1.0 - v * v / 12.0 + v * v * v / 30.0;
    return 2.0 * (2.0 * v - 3.0 + (v + 3.0) * std::exp(-v)) / (v * v);
  }
  if (v < 1e-3) return 1.0 - v * v / 36.0;
  return 2.0 * (8.0 * v - 15.0 + (v * v + 7.0 * v + 15.0) * std::exp(-v)) / (3.0 * v * v);
}

// Box mean of amp2 * exp(-r^2/(2 width^2)) in one coordinate, at location x.
double se_mean_1d(double width, double a, double b, double x) {
  const double s = width * std::numbers::sqrt2;
  return width * std::sqrt(std::numbers::pi / 2.0) *
         (std::erf((b - x) / s) - std::erf((a - x) / s)) / (b - a);
}

// Double box average of exp(-r^2/(2 width^2)) over [a, a+L]^2.
double se_double_average_1d(double width, double L) {
  const double s2 = width * std::numbers::sqrt2;
  const double erf_term = L * width * std::sqrt(std::numbers::pi / 2.0) * std::erf(L / s2);
  const double exp_term = width * width * std::expm1(-L * L / (2.0 * width * width));
  return 2.0 * (erf_term + exp_term) / (L * L);
}

double se_box_mean(double amp2, double width, const UniformBox& box, const Point& x) {
  double m = amp2;
  for (Eigen::Index k = 0; k < x.size(); ++k) m *= se_mean_1d(width, box.lower[k], box.upper[k], x[k]);
  return m;
}

double se_box_initial_error(double amp2, double width, const UniformBox& box) {
  double m = amp2;
  for (Eigen::Index k = 0; k < box.lower.size(); ++k)
    m *= se_double_average_1d(width, box.upper[k] - box.lower[k]);
  return m;
}

double quadrature_mean(const ScalarKernel& k, const Measure& pi, const Point& x,
                       const IdentityOptions& opts) {
  if (!opts.allow_quadrature_fallback)
    throw UnsupportedIdentityError("kernel_mean: no closed form for this (kernel, measure) pair");
  if (pi.is_box()) {
    const auto& box = pi.box();
    const double volume = (box.upper - box.lower).prod();
    auto res = gl_integrate_box([&](const Point& t) { return scalar_eval(k, t, x); }, box.lower,
                                box.upper, opts.abs_tol * volume);
    return res.value / volume;
  }
  auto res = sphere_average_adaptive([&](const Point& w) { return scalar_eval(k, w, x); },
                                     opts.abs_tol);
  return res.value;
}

}  // namespace

ScalarKernel ScalarKernel::matern(double alpha, double amplitude, double lengthscale) {
  if (alpha != 0.5 && alpha != 1.5 && alpha != 2.5)
    throw InvalidArgumentError("matern: alpha must be one of 1/2, 3/2, 5/2");
  if (amplitude <= 0.0 || lengthscale <= 0.0)
    throw InvalidArgumentError("matern: amplitude and lengthscale must be positive");
  ScalarKernel k;
  k.v_ = Matern{alpha, amplitude, lengthscale};
  return k;
}

ScalarKernel ScalarKernel::squared_exponential(double amplitude, double lengthscale) {
  if (amplitude <= 0.0 || lengthscale <= 0.0)
    throw InvalidArgumentError("squared_exponential: amplitude and lengthscale must be positive");
  ScalarKernel k;
  k.v_ = SquaredExponential{amplitude, lengthscale};
  return k;
}

ScalarKernel ScalarKernel::sphere_sobolev32() {
  ScalarKernel k;
  k.v_ = SphereSobolev32{};
  return k;
}

int ScalarKernel::hyper_count() const { return is_sphere_sobolev() ? 0 : 2; }

double scalar_eval(const ScalarKernel& k, const Point& x, const Point& y) {
  if (x.size() != y.size()) throw DimensionMismatchError("scalar_eval: point dimensions differ");
  return std::visit(
      [&](const auto& kk) -> double {
        using T = std::decay_t<decltype(kk)>;
        const double r = (x - y).norm();
        if constexpr (std::is_same_v<T, Matern>) {
          return kk.amplitude * kk.amplitude *
                 matern_profile(kk.alpha, matern_scale(kk.alpha, kk.lengthscale), r);
        } else if constexpr (std::is_same_v<T, SquaredExponential>) {
          return kk.amplitude * kk.amplitude *
                 std::exp(-r * r / (2.0 * kk.lengthscale * kk.lengthscale));
        } else {
          check_on_sphere(x);
          check_on_sphere(y);
          return 8.0 / 3.0 - r;
        }
      },
      k.value());
}

double kernel_mean(const ScalarKernel& k, const Measure& pi, const Point& x,
                   const IdentityOptions& opts) {
  return std::visit(
      [&](const auto& kk) -> double {
        using T = std::decay_t<decltype(kk)>;
        if constexpr (std::is_same_v<T, SquaredExponential>) {
          if (pi.is_box())
            return se_box_mean(kk.amplitude * kk.amplitude, kk.lengthscale, pi.box(), x);
        } else if constexpr (std::is_same_v<T, Matern>) {
          if (pi.is_box() && pi.dimension() == 1) {
            const double a = pi.box().lower[0], b = pi.box().upper[0];
            const double beta = matern_scale(kk.alpha, kk.lengthscale);
            return kk.amplitude * kk.amplitude *
                   (matern_signed(kk.alpha, beta, b - x[0]) -
                    matern_signed(kk.alpha, beta, a - x[0])) /
                   (b - a);
          }
        } else {
          if (pi.is_sphere()) {
            check_on_sphere(x);
            // 8/3 - E||x - x'|| with the mean chord length 4/3.
            return 4.0 / 3.0;
          }
        }
        return quadrature_mean(k, pi, x, opts);
      },
      k.value());
}

double initial_error(const ScalarKernel& k, const Measure& pi, const IdentityOptions& opts) {
  return std::visit(
      [&](const auto& kk) -> double {
        using T = std::decay_t<decltype(kk)>;
        if constexpr (std::is_same_v<T, SquaredExponential>) {
          if (pi.is_box())
            return se_box_initial_error(kk.amplitude * kk.amplitude, kk.lengthscale, pi.box());
        } else if constexpr (std::is_same_v<T, Matern>) {
          if (pi.is_box() && pi.dimension() == 1) {
            const double L = pi.box().upper[0] - pi.box().lower[0];
            const double beta = matern_scale(kk.alpha, kk.lengthscale);
            return kk.amplitude * kk.amplitude * matern_box_double_average(kk.alpha, beta, L);
          }
        } else {
          if (pi.is_sphere()) return 4.0 / 3.0;
        }
        // Fallback: Pi-average of the kernel mean.
        if (!opts.allow_quadrature_fallback)
          throw UnsupportedIdentityError(
              "initial_error: no closed form for this (kernel, measure) pair");
        if (pi.is_box()) {
          const auto& box = pi.box();
          const double volume = (box.upper - box.lower).prod();
          auto res = gl_integrate_box([&](const Point& t) { return kernel_mean(k, pi, t, opts); },
                                      box.lower, box.upper, opts.abs_tol * volume);
          return res.value / volume;
        }
        auto res = sphere_average_adaptive(
            [&](const Point& w) { return kernel_mean(k, pi, w, opts); }, opts.abs_tol);
        return res.value;
      },
      k.value());
}

// --- OutputKernel -------------------------------------------------------------

Eigen::MatrixXd LmcKernel::induced_output_cov() const {
  Eigen::MatrixXd B = factors.transpose() * factors;
  if (nugget.size() > 0) B += nugget.asDiagonal();
  return B;
}

void ProcessConvolutionKernel::entry_se_params(int latent, int d, int dp, double& amp2,
                                               double& width) const {
  const double la_d = blur_amplitude(latent, d);
  const double la_dp = blur_amplitude(latent, dp);
  const double la_u = latent_amplitude[latent];
  const double w_d = blur_width(latent, d);
  const double w_dp = blur_width(latent, dp);
  const double w_u = latent_width[latent];
  const double S = w_d * w_d + w_dp * w_dp + w_u * w_u;
  width = std::sqrt(S);
  amp2 = la_d * la_d * la_dp * la_dp * la_u * la_u * 2.0 * std::numbers::pi * w_d * w_dp * w_u /
         width;
}

OutputKernel OutputKernel::separable(Eigen::MatrixXd B, ScalarKernel base) {
  if (B.rows() != B.cols() || B.rows() < 1)
    throw InvalidArgumentError("separable: B must be square and nonempty");
  if (!B.isApprox(B.transpose(), 1e-12))
    throw InvalidArgumentError("separable: B must be symmetric");
  OutputKernel k;
  k.v_ = SeparableKernel{std::move(B), std::move(base)};
  return k;
}

OutputKernel OutputKernel::lmc(Eigen::MatrixXd factors, ScalarKernel base, Eigen::VectorXd nugget) {
  if (factors.rows() < 1 || factors.cols() < 1)
    throw InvalidArgumentError("lmc: factors must be a nonempty R x D matrix");
  if (nugget.size() > 0) {
    if (nugget.size() != factors.cols())
      throw DimensionMismatchError("lmc: nugget size must match the number of outputs");
    if ((nugget.array() <= 0.0).any())
      throw InvalidArgumentError("lmc: nugget entries must be strictly positive when present");
  }
  OutputKernel k;
  k.v_ = LmcKernel{std::move(factors), std::move(nugget), std::move(base)};
  return k;
}

OutputKernel OutputKernel::process_convolution(Eigen::MatrixXd blur_amplitude,
                                               Eigen::MatrixXd blur_width,
                                               Eigen::VectorXd latent_amplitude,
                                               Eigen::VectorXd latent_width,
                                               std::vector<ScalarKernel> output_kernels) {
  const Eigen::Index R = blur_amplitude.rows();
  const Eigen::Index D = blur_amplitude.cols();
  if (R < 1 || D < 1) throw InvalidArgumentError("process_convolution: empty shape");
  if (blur_width.rows() != R || blur_width.cols() != D || latent_amplitude.size() != R ||
      latent_width.size() != R)
    throw DimensionMismatchError("process_convolution: inconsistent shapes");
  if ((blur_amplitude.array() <= 0.0).any() || (blur_width.array() <= 0.0).any() ||
      (latent_amplitude.array() <= 0.0).any() || (latent_width.array() <= 0.0).any())
    throw InvalidArgumentError("process_convolution: all amplitudes and widths must be positive");
  if (!output_kernels.empty() && static_cast<Eigen::Index>(output_kernels.size()) != D)
    throw DimensionMismatchError("process_convolution: need one output kernel per output");
  OutputKernel k;
  k.v_ = ProcessConvolutionKernel{std::move(blur_amplitude), std::move(blur_width),
                                  std::move(latent_amplitude), std::move(latent_width),
                                  std::move(output_kernels)};
  return k;
}

OutputKernel OutputKernel::sum(std::vector<OutputKernel> terms) {
  if (terms.empty()) throw InvalidArgumentError("sum: needs at least one term");
  const int D = terms[0].outputs();
  for (const auto& t : terms) {
    if (t.outputs() != D) throw DimensionMismatchError("sum: terms must agree on output count");
  }
  OutputKernel k;
  k.v_ = SumKernel{std::move(terms)};
  return k;
}

int OutputKernel::outputs() const {
  return std::visit(
      [](const auto& kk) -> int {
        using T = std::decay_t<decltype(kk)>;
        if constexpr (std::is_same_v<T, SeparableKernel>) return static_cast<int>(kk.B.rows());
        else if constexpr (std::is_same_v<T, LmcKernel>) return static_cast<int>(kk.factors.cols());
        else if constexpr (std::is_same_v<T, ProcessConvolutionKernel>) return kk.outputs();
        else return kk.terms[0].outputs();
      },
      v_);
}

std::optional<std::pair<Eigen::MatrixXd, ScalarKernel>> OutputKernel::separable_form() const {
  if (is_separable()) {
    const auto& s = std::get<SeparableKernel>(v_);
    return std::make_pair(s.B, s.base);
  }
  if (is_lmc()) {
    const auto& l = std::get<LmcKernel>(v_);
    if (l.nugget.size() == 0) return std::make_pair(l.induced_output_cov(), l.base);
  }
  return std::nullopt;
}

Eigen::MatrixXd matrix_eval(const OutputKernel& K, const Point& x, const Point& y) {
  const int D = K.outputs();
  return std::visit(
      [&](const auto& kk) -> Eigen::MatrixXd {
        using T = std::decay_t<decltype(kk)>;
        if constexpr (std::is_same_v<T, SeparableKernel>) {
          return kk.B * scalar_eval(kk.base, x, y);
        } else if constexpr (std::is_same_v<T, LmcKernel>) {
          return kk.induced_output_cov() * scalar_eval(kk.base, x, y);
        } else if constexpr (std::is_same_v<T, ProcessConvolutionKernel>) {
          Eigen::MatrixXd C = Eigen::MatrixXd::Zero(D, D);
          const double r2 = (x - y).squaredNorm();
          for (int i = 0; i < kk.latents(); ++i) {
            for (int d = 0; d < D; ++d) {
              for (int dp = d; dp < D; ++dp) {
                double amp2 = 0.0, width = 0.0;
                kk.entry_se_params(i, d, dp, amp2, width);
                const double v = amp2 * std::exp(-r2 / (2.0 * width * width));
                C(d, dp) += v;
                if (dp != d) C(dp, d) += v;
              }
            }
          }
          if (!kk.output_kernels.empty()) {
            for (int d = 0; d < D; ++d) C(d, d) += scalar_eval(kk.output_kernels[d], x, y);
          }
          return C;
        } else {
          Eigen::MatrixXd C = Eigen::MatrixXd::Zero(D, D);
          for (const auto& t : kk.terms) C += matrix_eval(t, x, y);
          return C;
        }
      },
      K.value());
}

Eigen::MatrixXd mo_kernel_mean(const OutputKernel& K, const Measure& pi, const Design& design,
                               const IdentityOptions& opts) {
  const int D = K.outputs();
  if (design.outputs() != D)
    throw DimensionMismatchError("mo_kernel_mean: design outputs must match kernel outputs");
  const int M = design.total_points();
  Eigen::MatrixXd Z(D, M);

  return std::visit(
      [&](const auto& kk) -> Eigen::MatrixXd {
        using T = std::decay_t<decltype(kk)>;
        if constexpr (std::is_same_v<T, SeparableKernel> || std::is_same_v<T, LmcKernel>) {
          Eigen::MatrixXd B;
          const ScalarKernel* base = nullptr;
          if constexpr (std::is_same_v<T, SeparableKernel>) {
            B = kk.B;
            base = &kk.base;
          } else {
            B = kk.induced_output_cov();
            base = &kk.base;
          }
          int col = 0;
          for (int dp = 0; dp < D; ++dp) {
            for (const auto& xj : design.points(dp)) {
              const double m = kernel_mean(*base, pi, xj, opts);
              for (int d = 0; d < D; ++d) Z(d, col) = B(d, dp) * m;
              ++col;
            }
          }
          return Z;
        } else if constexpr (std::is_same_v<T, ProcessConvolutionKernel>) {
          if (!pi.is_box())
            throw UnsupportedIdentityError(
                "mo_kernel_mean: process convolution identities require a box measure");
          int col = 0;
          for (int dp = 0; dp < D; ++dp) {
            for (const auto& xj : design.points(dp)) {
              for (int d = 0; d < D; ++d) {
                double v = 0.0;
                for (int i = 0; i < kk.latents(); ++i) {
                  double amp2 = 0.0, width = 0.0;
                  kk.entry_se_params(i, d, dp, amp2, width);
                  v += se_box_mean(amp2, width, pi.box(), xj);
                }
                if (d == dp && !kk.output_kernels.empty())
                  v += kernel_mean(kk.output_kernels[d], pi, xj, opts);
                Z(d, col) = v;
              }
              ++col;
            }
          }
          return Z;
        } else {
          Z.setZero();
          for (const auto& t : kk.terms) Z += mo_kernel_mean(t, pi, design, opts);
          return Z;
        }
      },
      K.value());
}

Eigen::MatrixXd mo_initial_error(const OutputKernel& K, const Measure& pi,
                                 const IdentityOptions& opts) {
  const int D = K.outputs();
  return std::visit(
      [&](const auto& kk) -> Eigen::MatrixXd {
        using T = std::decay_t<decltype(kk)>;
        if constexpr (std::is_same_v<T, SeparableKernel>) {
          return kk.B * initial_error(kk.base, pi, opts);
        } else if constexpr (std::is_same_v<T, LmcKernel>) {
          return kk.induced_output_cov() * initial_error(kk.base, pi, opts);
        } else if constexpr (std::is_same_v<T, ProcessConvolutionKernel>) {
          if (!pi.is_box())
            throw UnsupportedIdentityError(
                "mo_initial_error: process convolution identities require a box measure");
          Eigen::MatrixXd E = Eigen::MatrixXd::Zero(D, D);
          for (int i = 0; i < kk.latents(); ++i) {
            for (int d = 0; d < D; ++d) {
              for (int dp = d; dp < D; ++dp) {
                double amp2 = 0.0, width = 0.0;
                kk.entry_se_params(i, d, dp, amp2, width);
                const double v = se_box_initial_error(amp2, width, pi.box());
                E(d, dp) += v;
                if (dp != d) E(dp, d) += v;
              }
            }
          }
          if (!kk.output_kernels.empty()) {
            for (int d = 0; d < D; ++d) E(d, d) += initial_error(kk.output_kernels[d], pi, opts);
          }
          return E;
        } else {
          Eigen::MatrixXd E = Eigen::MatrixXd::Zero(D, D);
          for (const auto& t : kk.terms) E += mo_initial_error(t, pi, opts);
          return E;
        }
      },
      K.value());
}

// --- Packing ------------------------------------------------------------------

namespace {

void pack_scalar(const ScalarKernel& k, std::vector<double>& out, std::vector<std::string>* names,
                 const std::string& prefix) {
  std::visit(
      [&](const auto& kk) {
        using T = std::decay_t<decltype(kk)>;
        if constexpr (!std::is_same_v<T, SphereSobolev32>) {
          out.push_back(std::log(kk.amplitude));
          out.push_back(std::log(kk.lengthscale));
          if (names) {
            names->push_back(prefix + ".log_amplitude");
            names->push_back(prefix + ".log_lengthscale");
          }
        }
      },
      k.value());
}

ScalarKernel unpack_scalar(const ScalarKernel& schema, const Eigen::VectorXd& theta, int& pos) {
  return std::visit(
      [&](const auto& kk) -> ScalarKernel {
        using T = std::decay_t<decltype(kk)>;
        if constexpr (std::is_same_v<T, Matern>) {
          const double amp = std::exp(theta[pos]);
          const double len = std::exp(theta[pos + 1]);
          pos += 2;
          return ScalarKernel::matern(kk.alpha, amp, len);
        } else if constexpr (std::is_same_v<T, SquaredExponential>) {
          const double amp = std::exp(theta[pos]);
          const double len = std::exp(theta[pos + 1]);
          pos += 2;
          return ScalarKernel::squared_exponential(amp, len);
        } else {
          return ScalarKernel::sphere_sobolev32();
        }
      },
      schema.value());
}

void pack_impl(const OutputKernel& K, std::vector<double>& out, std::vector<std::string>* names,
               const std::string& prefix) {
  std::visit(
      [&](const auto& kk) {
        using T = std::decay_t<decltype(kk)>;
        if constexpr (std::is_same_v<T, SeparableKernel>) {
          const Eigen::MatrixXd L = Eigen::LLT<Eigen::MatrixXd>(kk.B).matrixL();
          for (int i = 0; i < L.rows(); ++i) {
            for (int j = 0; j <= i; ++j) {
              out.push_back(i == j ? std::log(L(i, i)) : L(i, j));
              if (names)
                names->push_back(prefix + (i == j ? ".log_L" : ".L") + std::to_string(i) +
                                 std::to_string(j));
            }
          }
          pack_scalar(kk.base, out, names, prefix + ".base");
        } else if constexpr (std::is_same_v<T, LmcKernel>) {
          for (int i = 0; i < kk.factors.rows(); ++i) {
            for (int d = 0; d < kk.factors.cols(); ++d) {
              out.push_back(kk.factors(i, d));
              if (names)
                names->push_back(prefix + ".a" + std::to_string(i) + std::to_string(d));
            }
          }
          for (int d = 0; d < kk.nugget.size(); ++d) {
            out.push_back(std::log(kk.nugget[d]));
            if (names) names->push_back(prefix + ".log_nugget" + std::to_string(d));
          }
          pack_scalar(kk.base, out, names, prefix + ".base");
        } else if constexpr (std::is_same_v<T, ProcessConvolutionKernel>) {
          auto push_mat = [&](const Eigen::MatrixXd& m, const std::string& tag) {
            for (int i = 0; i < m.rows(); ++i)
              for (int d = 0; d < m.cols(); ++d) {
                out.push_back(std::log(m(i, d)));
                if (names)
                  names->push_back(prefix + "." + tag + std::to_string(i) + std::to_string(d));
              }
          };
          push_mat(kk.blur_amplitude, "log_blur_amp");
          push_mat(kk.blur_width, "log_blur_width");
          for (int i = 0; i < kk.latent_amplitude.size(); ++i) {
            out.push_back(std::log(kk.latent_amplitude[i]));
            if (names) names->push_back(prefix + ".log_latent_amp" + std::to_string(i));
          }
          for (int i = 0; i < kk.latent_width.size(); ++i) {
            out.push_back(std::log(kk.latent_width[i]));
            if (names) names->push_back(prefix + ".log_latent_width" + std::to_string(i));
          }
          for (std::size_t d = 0; d < kk.output_kernels.size(); ++d)
            pack_scalar(kk.output_kernels[d], out, names, prefix + ".w" + std::to_string(d));
        } else {
          int q = 0;
          for (const auto& t : kk.terms)
            pack_impl(t, out, names, prefix + ".term" + std::to_string(q++));
        }
      },
      K.value());
}

OutputKernel unpack_impl(const OutputKernel& schema, const Eigen::VectorXd& theta, int& pos) {
  return std::visit(
      [&](const auto& kk) -> OutputKernel {
        using T = std::decay_t<decltype(kk)>;
        if constexpr (std::is_same_v<T, SeparableKernel>) {
          const int D = static_cast<int>(kk.B.rows());
          Eigen::MatrixXd L = Eigen::MatrixXd::Zero(D, D);
          for (int i = 0; i < D; ++i)
            for (int j = 0; j <= i; ++j) L(i, j) = (i == j) ? std::exp(theta[pos++]) : theta[pos++];
          ScalarKernel base = unpack_scalar(kk.base, theta, pos);
          return OutputKernel::separable(L * L.transpose(), std::move(base));
        } else if constexpr (std::is_same_v<T, LmcKernel>) {
          Eigen::MatrixXd A(kk.factors.rows(), kk.factors.cols());
          for (int i = 0; i < A.rows(); ++i)
            for (int d = 0; d < A.cols(); ++d) A(i, d) = theta[pos++];
          Eigen::VectorXd nugget(kk.nugget.size());
          for (int d = 0; d < nugget.size(); ++d) nugget[d] = std::exp(theta[pos++]);
          ScalarKernel base = unpack_scalar(kk.base, theta, pos);
          return OutputKernel::lmc(std::move(A), std::move(base), std::move(nugget));
        } else if constexpr (std::is_same_v<T, ProcessConvolutionKernel>) {
          auto pull_mat = [&](const Eigen::MatrixXd& shape) {
            Eigen::MatrixXd m(shape.rows(), shape.cols());
            for (int i = 0; i < m.rows(); ++i)
              for (int d = 0; d < m.cols(); ++d) m(i, d) = std::exp(theta[pos++]);
            return m;
          };
          Eigen::MatrixXd ba = pull_mat(kk.blur_amplitude);
          Eigen::MatrixXd bw = pull_mat(kk.blur_width);
          Eigen::VectorXd la(kk.latent_amplitude.size()), lw(kk.latent_width.size());
          for (int i = 0; i < la.size(); ++i) la[i] = std::exp(theta[pos++]);
          for (int i = 0; i < lw.size(); ++i) lw[i] = std::exp(theta[pos++]);
          std::vector<ScalarKernel> wk;
          wk.reserve(kk.output_kernels.size());
          for (const auto& s : kk.output_kernels) wk.push_back(unpack_scalar(s, theta, pos));
          return OutputKernel::process_convolution(std::move(ba), std::move(bw), std::move(la),
                                                   std::move(lw), std::move(wk));
        } else {
          std::vector<OutputKernel> terms;
          terms.reserve(kk.terms.size());
          for (const auto& t : kk.terms) terms.push_back(unpack_impl(t, theta, pos));
          return OutputKernel::sum(std::move(terms));
        }
      },
      schema.value());
}

}  // namespace

HyperVector pack_hypers(const OutputKernel& K) {
  std::vector<double> out;
  pack_impl(K, out, nullptr, "");
  return HyperVector{Eigen::Map<Eigen::VectorXd>(out.data(), static_cast<Eigen::Index>(out.size())),
                     K};
}

OutputKernel unpack_hypers(const OutputKernel& schema, const Eigen::VectorXd& theta) {
  if (theta.size() != hyper_count(schema))
    throw DimensionMismatchError("unpack_hypers: theta length does not match schema");
  int pos = 0;
  return unpack_impl(schema, theta, pos);
}

int hyper_count(const OutputKernel& K) {
  std::vector<double> out;
  pack_impl(K, out, nullptr, "");
  return static_cast<int>(out.size());
}

std::vector<std::string> hyper_names(const OutputKernel& K) {
  std::vector<double> out;
  std::vector<std::string> names;
  pack_impl(K, out, &names, "k");
  return names;
}

// --- Analytic gradients ---------------------------------------------------------

namespace {

// d/d(log sigma) of the unit-amplitude profile, divided by amplitude^2.
double scalar_dlogsigma(const ScalarKernel& k, double r) {
  return std::visit(
      [&](const auto& kk) -> double {
        using T = std::decay_t<decltype(kk)>;
        if constexpr (std::is_same_v<T, SquaredExponential>) {
          const double s2 = kk.lengthscale * kk.lengthscale;
          return kk.amplitude * kk.amplitude * std::exp(-r * r / (2.0 * s2)) * r * r / s2;
        } else if constexpr (std::is_same_v<T, Matern>) {
          const double beta = matern_scale(kk.alpha, kk.lengthscale);
          const double v = beta * r;
          const double a2 = kk.amplitude * kk.amplitude;
          if (kk.alpha == 0.5) return a2 * std::exp(-v) * v;
          if (kk.alpha == 1.5) return a2 * v * v * std::exp(-v);
          return a2 * (v * v / 3.0) * (1.0 + v) * std::exp(-v);
        } else {
          return 0.0;
        }
      },
      k.value());
}

// Appends [d/d(log amplitude), d/d(log lengthscale)] of c(x,y).
void scalar_grads(const ScalarKernel& k, const Point& x, const Point& y,
                  std::vector<double>& out) {
  if (k.is_sphere_sobolev()) return;
  const double c = scalar_eval(k, x, y);
  out.push_back(2.0 * c);
  out.push_back(scalar_dlogsigma(k, (x - y).norm()));
}

bool grad_impl(const OutputKernel& K, const Point& x, const Point& y,
               std::vector<Eigen::MatrixXd>& grads) {
  const int D = K.outputs();
  return std::visit(
      [&](const auto& kk) -> bool {
        using T = std::decay_t<decltype(kk)>;
        if constexpr (std::is_same_v<T, SeparableKernel>) {
          const double c = scalar_eval(kk.base, x, y);
          const Eigen::MatrixXd L = Eigen::LLT<Eigen::MatrixXd>(kk.B).matrixL();
          for (int i = 0; i < D; ++i) {
            for (int j = 0; j <= i; ++j) {
              Eigen::MatrixXd dB = Eigen::MatrixXd::Zero(D, D);
              dB.row(i) += L.col(j).transpose();
              dB.col(i) += L.col(j);
              if (i == j) dB *= L(i, i);  // chain rule through log diagonal
              grads.push_back(dB * c);
            }
          }
          std::vector<double> sg;
          scalar_grads(kk.base, x, y, sg);
          for (double g : sg) grads.push_back(kk.B * g);
          return true;
        } else if constexpr (std::is_same_v<T, LmcKernel>) {
          const double c = scalar_eval(kk.base, x, y);
          const int R = static_cast<int>(kk.factors.rows());
          for (int i = 0; i < R; ++i) {
            for (int d0 = 0; d0 < D; ++d0) {
              Eigen::MatrixXd dB = Eigen::MatrixXd::Zero(D, D);
              dB.row(d0) += kk.factors.row(i);
              dB.col(d0) += kk.factors.row(i).transpose();
              grads.push_back(dB * c);
            }
          }
          for (int d = 0; d < kk.nugget.size(); ++d) {
            Eigen::MatrixXd dB = Eigen::MatrixXd::Zero(D, D);
            dB(d, d) = kk.nugget[d];
            grads.push_back(dB * c);
          }
          std::vector<double> sg;
          scalar_grads(kk.base, x, y, sg);
          const Eigen::MatrixXd B = kk.induced_output_cov();
          for (double g : sg) grads.push_back(B * g);
          return true;
        } else if constexpr (std::is_same_v<T, ProcessConvolutionKernel>) {
          const double r2 = (x - y).squaredNorm();
          const int R = kk.latents();
          // Per-latent entry values and the S = sum-of-squared-widths per entry.
          std::vector<Eigen::MatrixXd> entry(R), Smat(R);
          for (int i = 0; i < R; ++i) {
            entry[i].resize(D, D);
            Smat[i].resize(D, D);
            for (int d = 0; d < D; ++d) {
              for (int dp = 0; dp < D; ++dp) {
                double amp2 = 0.0, width = 0.0;
                kk.entry_se_params(i, d, dp, amp2, width);
                entry[i](d, dp) = amp2 * std::exp(-r2 / (2.0 * width * width));
                Smat[i](d, dp) = width * width;
              }
            }
          }
          // log blur amplitudes
          for (int i = 0; i < R; ++i) {
            for (int d0 = 0; d0 < D; ++d0) {
              Eigen::MatrixXd g = Eigen::MatrixXd::Zero(D, D);
              for (int d = 0; d < D; ++d)
                for (int dp = 0; dp < D; ++dp) {
                  const double mult = 2.0 * ((d == d0 ? 1.0 : 0.0) + (dp == d0 ? 1.0 : 0.0));
                  g(d, dp) += mult * entry[i](d, dp);
                }
              grads.push_back(g);
            }
          }
          // log blur widths
          for (int i = 0; i < R; ++i) {
            for (int d0 = 0; d0 < D; ++d0) {
              const double w2 = kk.blur_width(i, d0) * kk.blur_width(i, d0);
              Eigen::MatrixXd g = Eigen::MatrixXd::Zero(D, D);
              for (int d = 0; d < D; ++d)
                for (int dp = 0; dp < D; ++dp) {
                  const double slots = (d == d0 ? 1.0 : 0.0) + (dp == d0 ? 1.0 : 0.0);
                  if (slots == 0.0) continue;
                  const double S = Smat[i](d, dp);
                  g(d, dp) += slots * entry[i](d, dp) * (1.0 - w2 / S + w2 * r2 / (S * S));
                }
              grads.push_back(g);
            }
          }
          // log latent amplitudes
          for (int i = 0; i < R; ++i) grads.push_back(2.0 * entry[i]);
          // log latent widths
          for (int i = 0; i < R; ++i) {
            const double w2 = kk.latent_width[i] * kk.latent_width[i];
            Eigen::MatrixXd g(D, D);
            for (int d = 0; d < D; ++d)
              for (int dp = 0; dp < D; ++dp) {
                const double S = Smat[i](d, dp);
                g(d, dp) = entry[i](d, dp) * (1.0 - w2 / S + w2 * r2 / (S * S));
              }
            grads.push_back(g);
          }
          // per-output independent kernels
          for (std::size_t d = 0; d < kk.output_kernels.size(); ++d) {
            std::vector<double> sg;
            scalar_grads(kk.output_kernels[d], x, y, sg);
            for (double gv : sg) {
              Eigen::MatrixXd g = Eigen::MatrixXd::Zero(D, D);
              g(static_cast<int>(d), static_cast<int>(d)) = gv;
              grads.push_back(g);
            }
          }
          return true;
        } else {
          bool ok = true;
          for (const auto& t : kk.terms) ok = grad_impl(t, x, y, grads) && ok;
          return ok;
        }
      },
      K.value());
}

}  // namespace

bool matrix_eval_grad(const OutputKernel& K, const Point& x, const Point& y,
                      std::vector<Eigen::MatrixXd>& grads) {
  grads.clear();
  grads.reserve(hyper_count(K));
  return grad_impl(K, x, y, grads);
}

EntryEvaluator make_entry_evaluator(const OutputKernel& K) {
  return std::visit(
      [&](const auto& kk) -> EntryEvaluator {
        using T = std::decay_t<decltype(kk)>;
        if constexpr (std::is_same_v<T, SeparableKernel>) {
          return [B = kk.B, base = kk.base](int d, int dp, const Point& x, const Point& y) {
            return B(d, dp) * scalar_eval(base, x, y);
          };
        } else if constexpr (std::is_same_v<T, LmcKernel>) {
          return [B = kk.induced_output_cov(), base = kk.base](int d, int dp, const Point& x,
                                                               const Point& y) {
            return B(d, dp) * scalar_eval(base, x, y);
          };
        } else if constexpr (std::is_same_v<T, ProcessConvolutionKernel>) {
          const int D = kk.outputs();
          const int R = kk.latents();
          std::vector<Eigen::MatrixXd> amp2(R), half_inv_w2(R);
          for (int i = 0; i < R; ++i) {
            amp2[i].resize(D, D);
            half_inv_w2[i].resize(D, D);
            for (int d = 0; d < D; ++d)
              for (int dp = 0; dp < D; ++dp) {
                double a = 0.0, w = 0.0;
                kk.entry_se_params(i, d, dp, a, w);
                amp2[i](d, dp) = a;
                half_inv_w2[i](d, dp) = 0.5 / (w * w);
              }
          }
          return [amp2 = std::move(amp2), half_inv_w2 = std::move(half_inv_w2),
                  wk = kk.output_kernels, R](int d, int dp, const Point& x, const Point& y) {
            const double r2 = (x - y).squaredNorm();
            double v = 0.0;
            for (int i = 0; i < R; ++i)
              v += amp2[i](d, dp) * std::exp(-r2 * half_inv_w2[i](d, dp));
            if (d == dp && !wk.empty()) v += scalar_eval(wk[d], x, y);
            return v;
          };
        } else {
          std::vector<EntryEvaluator> parts;
          parts.reserve(kk.terms.size());
          for (const auto& t : kk.terms) parts.push_back(make_entry_evaluator(t));
          return [parts = std::move(parts)](int d, int dp, const Point& x, const Point& y) {
            double v = 0.0;
            for (const auto& p : parts) v += p(d, dp, x, y);
            return v;
          };
        }
      },
      K.value());
}

}  // namespace mobq
