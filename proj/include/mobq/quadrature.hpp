#pragma once

#include <functional>
#include <vector>

#include <Eigen/Core>

#include "mobq/core.hpp"

namespace mobq {

struct QuadratureRule {
  std::vector<double> nodes;    // on [-1, 1]
  std::vector<double> weights;  // sum to 2
};

// Gauss-Legendre nodes/weights by Newton iteration on P_n; cached per n.
const QuadratureRule& gauss_legendre(int n);

// integral of f over [a, b]
double gl_integrate(const std::function<double(double)>& f, double a, double b, int n);

struct AdaptiveResult {
  double value;
  double error_estimate;  // |last - previous| across the final doubling
  int nodes_used;
  bool converged;
};

// Doubles the node count (up to max_nodes, default 2^14) until two
// consecutive doublings each move the value by less than abs_tol. Breakpoints
// split the interval so each piece is smooth.
AdaptiveResult gl_integrate_adaptive(const std::function<double(double)>& f, double a, double b,
                                     double abs_tol, const std::vector<double>& breakpoints = {},
                                     int max_nodes = 1 << 14);

// Tensorized rule over a box; doubles per-axis nodes until stable.
AdaptiveResult gl_integrate_box(const std::function<double(const Point&)>& f,
                                const Eigen::VectorXd& lower, const Eigen::VectorXd& upper,
                                double abs_tol, int max_nodes_per_axis = 1 << 11);

// Deterministic near-equal-area point set on the unit sphere.
PointList fibonacci_sphere(int n);

// Mean of f over the uniform sphere measure via Fibonacci averages with
// Richardson-style doubling.
AdaptiveResult sphere_average_adaptive(const std::function<double(const Point&)>& f, double abs_tol,
                                       int max_points = 1 << 21);

// Mean over the sphere of an integrand supported on the hemisphere
// {w : w . axis > 0} and smooth there. Gauss-Legendre in aligned spherical
// coordinates, doubled until stable.
AdaptiveResult sphere_cap_average_adaptive(const std::function<double(const Point&)>& f,
                                           const Point& axis, double abs_tol,
                                           int max_nodes_per_axis = 1 << 10);

}  // namespace mobq
