#include "mobq/testbeds.hpp"

#include <cmath>
#include <limits>

#include "mobq/errors.hpp"

namespace mobq {

namespace {

void check_domain(double x, double lo, double hi, const char* what) {
  if (x < lo || x > hi) throw DomainError(std::string(what) + ": input outside the domain");
}

// Tridiagonal solve (Thomas algorithm); diagonals passed as (sub, diag, super).
std::vector<double> solve_tridiagonal(std::vector<double> sub, std::vector<double> diag,
                                      std::vector<double> super, std::vector<double> rhs) {
  const std::size_t n = diag.size();
  for (std::size_t i = 1; i < n; ++i) {
    const double w = sub[i] / diag[i - 1];
    diag[i] -= w * super[i - 1];
    rhs[i] -= w * rhs[i - 1];
  }
  std::vector<double> x(n);
  x[n - 1] = rhs[n - 1] / diag[n - 1];
  for (std::size_t i = n - 1; i-- > 0;) x[i] = (rhs[i] - super[i] * x[i + 1]) / diag[i];
  return x;
}

// Natural cubic spline second derivatives on a uniform grid.
std::vector<double> spline_second_derivatives(const std::vector<double>& grid,
                                              const std::vector<double>& values) {
  const std::size_t n = grid.size();
  std::vector<double> m(n, 0.0);
  if (n < 3) return m;
  const double h = grid[1] - grid[0];
  std::vector<double> sub(n - 2, h), diag(n - 2, 4.0 * h), super(n - 2, h), rhs(n - 2);
  for (std::size_t i = 0; i < n - 2; ++i)
    rhs[i] = 6.0 * (values[i + 2] - 2.0 * values[i + 1] + values[i]) / h;
  auto interior = solve_tridiagonal(std::move(sub), std::move(diag), std::move(super),
                                    std::move(rhs));
  for (std::size_t i = 0; i < n - 2; ++i) m[i + 1] = interior[i];
  return m;
}

}  // namespace

double step_function(double x, Fidelity fidelity) {
  check_domain(x, 0.0, 2.0, "step_function");
  if (fidelity == Fidelity::low) return x <= 1.0 ? 0.0 : 1.0;
  return x <= 1.0 ? -1.0 : 2.0;
}

double forrester_jump(double x, Fidelity fidelity) {
  check_domain(x, 0.0, 1.0, "forrester_jump");
  const double base = (3.0 * x - 1.0) * (3.0 * x - 1.0) * std::sin(12.0 * x - 4.0) / 4.0 +
                      10.0 * (x - 1.0);
  const double low = x <= 0.5 ? base : base + 3.0;
  if (fidelity == Fidelity::low) return low;
  const double high = 2.0 * low - 20.0 * (x - 1.0);
  return x <= 0.5 ? high : high + 4.0;
}

double BVPSolution::operator()(double x) const {
  check_domain(x, grid.front(), grid.back(), "BVPSolution");
  const double h = grid[1] - grid[0];
  std::size_t i = static_cast<std::size_t>((x - grid.front()) / h);
  if (i >= grid.size() - 1) i = grid.size() - 2;
  const double a = (grid[i + 1] - x) / h;
  const double b = (x - grid[i]) / h;
  return a * values[i] + b * values[i + 1] +
         ((a * a * a - a) * second_derivatives_[i] + (b * b * b - b) * second_derivatives_[i + 1]) *
             h * h / 6.0;
}

namespace {

// Damped Newton with a pseudo-transient 1/dt shift at a fixed eps; returns
// false on stagnation. The shift follows the parabolic flow
// u_t = eps u'' + u - u^3 - sin(x) toward its stable steady state and fades
// out (dt grows) as the residual drops, leaving plain Newton near the root.
// Residual history accumulates across continuation stages.
bool newton_stage(double eps, const std::vector<double>& x, std::vector<double>& u,
                  std::vector<double>& res_history) {
  const int m = static_cast<int>(x.size());
  const double h = x[1] - x[0];

  auto residual = [&](const std::vector<double>& v) {
    std::vector<double> f(m);
    f[0] = v[0] - 1.0;
    f[m - 1] = v[m - 1] + 1.0;
    for (int j = 1; j < m - 1; ++j) {
      f[j] = eps * (v[j - 1] - 2.0 * v[j] + v[j + 1]) / (h * h) + v[j] - v[j] * v[j] * v[j] -
             std::sin(x[j]);
    }
    return f;
  };
  auto max_norm = [](const std::vector<double>& f) {
    double r = 0.0;
    for (double v : f) r = std::max(r, std::abs(v));
    return r;
  };

  std::vector<double> f = residual(u);
  double fnorm = max_norm(f);
  res_history.push_back(fnorm);

  double dt = 0.1;
  for (int iter = 0; iter < 500 && fnorm >= 1e-8; ++iter) {
    // Tridiagonal shifted Jacobian; boundary rows pinned to the identity.
    std::vector<double> sub(m, 0.0), diag(m, 1.0), super(m, 0.0), rhs(m);
    for (int j = 1; j < m - 1; ++j) {
      sub[j] = eps / (h * h);
      super[j] = eps / (h * h);
      diag[j] = -2.0 * eps / (h * h) + 1.0 - 3.0 * u[j] * u[j] - 1.0 / dt;
    }
    for (int j = 0; j < m; ++j) rhs[j] = -f[j];
    const std::vector<double> delta = solve_tridiagonal(sub, diag, super, rhs);

    std::vector<double> cand(m);
    for (int j = 0; j < m; ++j) cand[j] = u[j] + delta[j];
    std::vector<double> fc = residual(cand);
    const double cnorm = max_norm(fc);
    if (cnorm < fnorm) {
      // Switched evolution relaxation: grow dt as the residual falls.
      dt = std::min(dt * std::max(fnorm / std::max(cnorm, 1e-300), 1.0), 1e12);
      u = std::move(cand);
      f = std::move(fc);
      fnorm = cnorm;
    } else {
      dt *= 0.25;
      if (dt < 1e-8) break;
    }
    res_history.push_back(fnorm);
  }
  return fnorm < 1e-8;
}

}  // namespace

BVPSolution allen_cahn_solve(double eps, int grid_size) {
  if (eps <= 0.0) throw InvalidArgumentError("allen_cahn_solve: eps must be positive");
  if (grid_size < 50) throw InvalidArgumentError("allen_cahn_solve: grid size must be >= 50");

  const int m = grid_size;
  const double a = 0.0, b = 10.0;
  const double h = (b - a) / (m - 1);
  std::vector<double> x(m), u(m);
  for (int j = 0; j < m; ++j) x[j] = a + j * h;
  // Initial guess: line through the boundary values u(0) = 1, u(10) = -1.
  for (int j = 0; j < m; ++j) u[j] = 1.0 - 2.0 * x[j] / (b - a);
  u[0] = 1.0;
  u[m - 1] = -1.0;

  // The solution branch reachable from the linear ramp folds as eps drops
  // (around eps ~ 0.85 for this forcing), so Newton alone cannot get there.
  // Follow the parabolic flow u_t = eps u'' + u - u^3 - sin(x) instead: a
  // semi-implicit march (implicit diffusion, explicit reaction) lands in the
  // basin of the stable steady state, then Newton polishes.
  {
    const double dt = 0.05;
    std::vector<double> sub(m, 0.0), diag(m, 1.0), super(m, 0.0), rhs(m);
    auto interior_residual = [&](const std::vector<double>& v) {
      double r = 0.0;
      for (int j = 1; j < m - 1; ++j) {
        r = std::max(r, std::abs(eps * (v[j - 1] - 2.0 * v[j] + v[j + 1]) / (h * h) + v[j] -
                                 v[j] * v[j] * v[j] - std::sin(x[j])));
      }
      return r;
    };
    for (int step = 0; step < 4000; ++step) {
      rhs[0] = 1.0;
      rhs[m - 1] = -1.0;
      for (int j = 1; j < m - 1; ++j) {
        sub[j] = -eps / (h * h);
        super[j] = -eps / (h * h);
        diag[j] = 1.0 / dt + 2.0 * eps / (h * h);
        rhs[j] = u[j] / dt + u[j] - u[j] * u[j] * u[j] - std::sin(x[j]);
      }
      u = solve_tridiagonal(sub, diag, super, rhs);
      if (step % 50 == 49 && interior_residual(u) < 1e-3) break;
    }
  }

  std::vector<double> res_history;
  if (!newton_stage(eps, x, u, res_history))
    throw SolverFailedError("allen_cahn_solve: Newton stagnated before reaching 1e-8",
                            std::move(res_history));

  BVPSolution sol;
  sol.grid = std::move(x);
  sol.values = std::move(u);
  sol.residual_norm = res_history.back();
  sol.second_derivatives_ = spline_second_derivatives(sol.grid, sol.values);
  return sol;
}

double EnvironmentMap::eval(const Point& w) const {
  double v = 0.0;
  for (const auto& lobe : lobes)
    v += lobe.weight * std::exp(lobe.concentration * (w.dot(lobe.mean_direction) - 1.0));
  return v;
}

double IlluminationScene::reflectance(const Point& wi, const Point& w0) const {
  if (phong_exponent <= 0.0) return albedo;
  const double c = std::max(0.0, wi.dot(w0));
  return albedo * std::pow(c, phong_exponent);
}

namespace {

Point unit3(double x, double y, double z) {
  Point p(3);
  p << x, y, z;
  return p.normalized();
}

EnvironmentMap make_map(std::initializer_list<VmfLobe> lobes) { return EnvironmentMap{lobes}; }

}  // namespace

IlluminationScene default_illumination_scene(int cameras, double angular_step) {
  IlluminationScene scene;
  scene.channels[0] = make_map({{1.2, 12.0, unit3(0.3, 0.2, 0.93)},
                                {0.8, 30.0, unit3(-0.4, 0.5, 0.77)},
                                {0.3, 4.0, unit3(0.1, -0.8, 0.59)}});
  scene.channels[1] = make_map({{1.0, 10.0, unit3(-0.2, 0.1, 0.97)},
                                {0.6, 25.0, unit3(0.6, 0.3, 0.74)},
                                {0.4, 6.0, unit3(-0.5, -0.4, 0.77)}});
  scene.channels[2] = make_map({{0.9, 18.0, unit3(0.05, 0.55, 0.83)},
                                {1.1, 8.0, unit3(-0.7, 0.1, 0.70)},
                                {0.2, 3.0, unit3(0.45, -0.3, 0.84)}});
  scene.normal = unit3(0.0, 0.0, 1.0);
  scene.cameras = camera_ring(unit3(0.0, 0.0, 1.0), cameras, angular_step);
  return scene;
}

double illumination_integrand(const IlluminationScene& scene, int channel, int camera,
                              const Point& wi) {
  if (channel < 0 || channel >= static_cast<int>(scene.channels.size()))
    throw InvalidArgumentError("illumination_integrand: channel out of range");
  if (camera < 0 || camera >= static_cast<int>(scene.cameras.size()))
    throw InvalidArgumentError("illumination_integrand: camera index out of range");
  const Point& w0 = scene.cameras[camera];
  const double clamp = wi.dot(w0);
  if (clamp <= 0.0) return 0.0;
  return scene.channels[channel].eval(wi) * scene.reflectance(wi, w0) * clamp;
}

PointList camera_ring(const Point& base, int count, double step) {
  if (count < 1) throw InvalidArgumentError("camera_ring: count must be >= 1");
  if (base.size() != 3) throw InvalidArgumentError("camera_ring: base must be 3-D");
  const Point w0 = base.normalized();
  Point ref(3);
  ref << 1.0, 0.0, 0.0;
  if (std::abs(w0.dot(ref)) > 0.9) ref << 0.0, 1.0, 0.0;
  const Point tangent = (ref - ref.dot(w0) * w0).normalized();
  PointList ring;
  ring.reserve(count);
  for (int i = 0; i < count; ++i) {
    const double phi = i * step;
    ring.push_back(std::cos(phi) * w0 + std::sin(phi) * tangent);
  }
  return ring;
}

Eigen::MatrixXd camera_covariance(const PointList& cameras) {
  const int d = static_cast<int>(cameras.size());
  Eigen::MatrixXd b(d, d);
  for (int i = 0; i < d; ++i) {
    for (int j = i; j < d; ++j) {
      b(i, j) = std::exp(cameras[i].dot(cameras[j]) - 1.0);
      b(j, i) = b(i, j);
    }
  }
  return b;
}

}  // namespace mobq
