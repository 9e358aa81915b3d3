#pragma once

#include <array>
#include <vector>

#include <Eigen/Core>

#include "mobq/core.hpp"

namespace mobq {

enum class Fidelity { low, high };

// Step pair on [0, 2]: low is 0 for x <= 1 and 1 above; high is -1 for x <= 1
// and 2 above.
double step_function(double x, Fidelity fidelity);

// Forrester function with jump on [0, 1]; high is defined in terms of low with
// a +4 branch offset past x = 1/2.
double forrester_jump(double x, Fidelity fidelity);

// Steady-state Allen-Cahn two-point boundary value problem on [0, 10]:
//   eps u'' + u - u^3 = sin(x),  u(0) = 1,  u(10) = -1.
// Central differences on a uniform grid, damped Newton on the nonlinear
// system; the returned solution interpolates with a natural cubic spline.
struct BVPSolution {
  std::vector<double> grid;
  std::vector<double> values;
  double residual_norm = 0.0;  // max-norm of the discretized residual

  double operator()(double x) const;

 private:
  friend BVPSolution allen_cahn_solve(double eps, int grid_size);
  std::vector<double> second_derivatives_;  // natural cubic spline state
};

BVPSolution allen_cahn_solve(double eps, int grid_size);

// Synthetic environment map: sum of von Mises-Fisher style lobes
// a exp(kappa (w . mu - 1)) per color channel.
struct VmfLobe {
  double weight;
  double concentration;
  Point mean_direction;  // unit vector
};

struct EnvironmentMap {
  std::vector<VmfLobe> lobes;
  double eval(const Point& w) const;
};

// Scene state for the global-illumination integrands
//   h^{w0}(wi) = L(wi) rho(wi, w0) [wi . w0]_+ .
// The rendering equation clamps against the surface normal n, but the paper's
// integrand definition clamps against w0; we keep n as separate state and
// clamp against w0 as printed.
struct IlluminationScene {
  std::array<EnvironmentMap, 3> channels;  // r, g, b
  Point normal;                            // unit vector
  double albedo = 1.0;
  double phong_exponent = 0.0;  // 0 selects the constant (Lambertian-like) reflectance
  PointList cameras;            // w0^1 .. w0^D, unit vectors

  double reflectance(const Point& wi, const Point& w0) const;
};

// Fixed three-lobe maps per channel, cameras on a great-circle ring starting
// at base_direction with the given angular step.
IlluminationScene default_illumination_scene(int cameras, double angular_step);

double illumination_integrand(const IlluminationScene& scene, int channel, int camera,
                              const Point& wi);

// D unit vectors on a great circle through base, consecutive pairs separated
// by `step` radians.
PointList camera_ring(const Point& base, int count, double step);

// (B)_{ij} = exp(w0^i . w0^j - 1).
Eigen::MatrixXd camera_covariance(const PointList& cameras);

}  // namespace mobq
