#include "mobq/quadrature.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <mutex>
#include <numbers>

#include "mobq/errors.hpp"

namespace mobq {

namespace {

QuadratureRule compute_gauss_legendre(int n) {
  QuadratureRule rule;
  rule.nodes.resize(n);
  rule.weights.resize(n);
  const int m = (n + 1) / 2;
  for (int i = 0; i < m; ++i) {
    // Tricomi initial guess for the i-th root of P_n.
    double x = std::cos(std::numbers::pi * (i + 0.75) / (n + 0.5));
    double pp = 0.0;
    for (int iter = 0; iter < 100; ++iter) {
      // Recurrence for P_n(x) and derivative.
      double p0 = 1.0, p1 = 0.0;
      for (int j = 0; j < n; ++j) {
        const double p2 = p1;
        p1 = p0;
        p0 = ((2.0 * j + 1.0) * x * p1 - j * p2) / (j + 1.0);
      }
      pp = n * (x * p0 - p1) / (x * x - 1.0);
      const double dx = p0 / pp;
      x -= dx;
      if (std::abs(dx) < 1e-15) break;
    }
    rule.nodes[i] = -x;
    rule.nodes[n - 1 - i] = x;
    const double w = 2.0 / ((1.0 - x * x) * pp * pp);
    rule.weights[i] = w;
    rule.weights[n - 1 - i] = w;
  }
  if (n % 2 == 1) rule.nodes[n / 2] = 0.0;
  return rule;
}

std::map<int, QuadratureRule>& rule_cache() {
  static std::map<int, QuadratureRule> cache;
  return cache;
}
std::mutex cache_mutex;

}  // namespace

const QuadratureRule& gauss_legendre(int n) {
  if (n < 1) throw InvalidArgumentError("gauss_legendre: n must be >= 1");
  std::lock_guard<std::mutex> lock(cache_mutex);
  auto it = rule_cache().find(n);
  if (it == rule_cache().end()) it = rule_cache().emplace(n, compute_gauss_legendre(n)).first;
  return it->second;
}

double gl_integrate(const std::function<double(double)>& f, double a, double b, int n) {
  const auto& rule = gauss_legendre(n);
  const double half = 0.5 * (b - a);
  const double mid = 0.5 * (a + b);
  double sum = 0.0;
  for (int i = 0; i < n; ++i) sum += rule.weights[i] * f(mid + half * rule.nodes[i]);
  return half * sum;
}

AdaptiveResult gl_integrate_adaptive(const std::function<double(double)>& f, double a, double b,
                                     double abs_tol, const std::vector<double>& breakpoints,
                                     int max_nodes) {
  if (!(a < b)) throw InvalidArgumentError("gl_integrate_adaptive: need a < b");
  std::vector<double> edges{a};
  for (double t : breakpoints) {
    if (t > a && t < b) edges.push_back(t);
  }
  edges.push_back(b);
  std::sort(edges.begin(), edges.end());

  auto total_at = [&](int n) {
    double v = 0.0;
    for (std::size_t i = 0; i + 1 < edges.size(); ++i) v += gl_integrate(f, edges[i], edges[i + 1], n);
    return v;
  };

  int n = 8;
  double prev = total_at(n);
  int small_diffs = 0;
  double last_diff = std::abs(prev);
  while (n < max_nodes) {
    n *= 2;
    const double cur = total_at(n);
    last_diff = std::abs(cur - prev);
    small_diffs = last_diff < abs_tol ? small_diffs + 1 : 0;
    if (small_diffs >= 2) return {cur, last_diff, n, true};
    prev = cur;
  }
  return {prev, last_diff, n, false};
}

AdaptiveResult gl_integrate_box(const std::function<double(const Point&)>& f,
                                const Eigen::VectorXd& lower, const Eigen::VectorXd& upper,
                                double abs_tol, int max_nodes_per_axis) {
  const int p = static_cast<int>(lower.size());
  if (p < 1 || upper.size() != p) throw InvalidArgumentError("gl_integrate_box: bad bounds");

  auto tensor_at = [&](int n) {
    const auto& rule = gauss_legendre(n);
    std::vector<int> idx(p, 0);
    double sum = 0.0;
    Point x(p);
    while (true) {
      double w = 1.0;
      for (int k = 0; k < p; ++k) {
        const double half = 0.5 * (upper[k] - lower[k]);
        const double mid = 0.5 * (upper[k] + lower[k]);
        x[k] = mid + half * rule.nodes[idx[k]];
        w *= half * rule.weights[idx[k]];
      }
      sum += w * f(x);
      int k = 0;
      for (; k < p; ++k) {
        if (++idx[k] < n) break;
        idx[k] = 0;
      }
      if (k == p) break;
    }
    return sum;
  };

  int n = 8;
  double prev = tensor_at(n);
  int small_diffs = 0;
  double last_diff = std::abs(prev);
  while (n < max_nodes_per_axis) {
    n *= 2;
    const double cur = tensor_at(n);
    last_diff = std::abs(cur - prev);
    small_diffs = last_diff < abs_tol ? small_diffs + 1 : 0;
    if (small_diffs >= 2) return {cur, last_diff, n, true};
    prev = cur;
  }
  return {prev, last_diff, n, false};
}

PointList fibonacci_sphere(int n) {
  if (n < 1) throw InvalidArgumentError("fibonacci_sphere: n must be >= 1");
  PointList pts;
  pts.reserve(n);
  const double golden = std::numbers::pi * (3.0 - std::sqrt(5.0));
  for (int i = 0; i < n; ++i) {
    const double z = 1.0 - (2.0 * i + 1.0) / n;
    const double r = std::sqrt(std::max(0.0, 1.0 - z * z));
    const double phi = golden * i;
    Point p(3);
    p << r * std::cos(phi), r * std::sin(phi), z;
    pts.push_back(p);
  }
  return pts;
}

AdaptiveResult sphere_average_adaptive(const std::function<double(const Point&)>& f, double abs_tol,
                                       int max_points) {
  auto avg_at = [&](int n) {
    const auto pts = fibonacci_sphere(n);
    double sum = 0.0;
    for (const auto& p : pts) sum += f(p);
    return sum / n;
  };
  int n = 1 << 10;
  double prev = avg_at(n);
  int small_diffs = 0;
  double last_diff = std::abs(prev);
  while (n < max_points) {
    n *= 2;
    const double cur = avg_at(n);
    last_diff = std::abs(cur - prev);
    small_diffs = last_diff < abs_tol ? small_diffs + 1 : 0;
    if (small_diffs >= 2) return {cur, last_diff, n, true};
    prev = cur;
  }
  return {prev, last_diff, n, false};
}

AdaptiveResult sphere_cap_average_adaptive(const std::function<double(const Point&)>& f,
                                           const Point& axis, double abs_tol,
                                           int max_nodes_per_axis) {
  if (axis.size() != 3) throw InvalidArgumentError("sphere_cap_average_adaptive: axis must be 3-D");
  const Point e3 = axis.normalized();
  // Orthonormal frame {e1, e2, e3}.
  Point ref(3);
  ref << 1.0, 0.0, 0.0;
  if (std::abs(e3.dot(ref)) > 0.9) ref << 0.0, 1.0, 0.0;
  const Point e1 = (ref - ref.dot(e3) * e3).normalized();
  Point e2(3);  // e3 x e1 (VectorXd has no cross())
  e2 << e3[1] * e1[2] - e3[2] * e1[1], e3[2] * e1[0] - e3[0] * e1[2], e3[0] * e1[1] - e3[1] * e1[0];

  // Mean over the sphere = (1/4pi) int_0^{2pi} int_0^{pi/2} f sin(theta) dtheta dphi,
  // restricted to the supporting hemisphere; substitution t = cos(theta).
  auto value_at = [&](int n) {
    const auto& rule = gauss_legendre(n);
    double sum = 0.0;
    for (int it = 0; it < n; ++it) {
      const double t = 0.5 + 0.5 * rule.nodes[it];  // cos(theta) in (0, 1)
      const double wt = 0.5 * rule.weights[it];
      const double s = std::sqrt(std::max(0.0, 1.0 - t * t));
      for (int ip = 0; ip < n; ++ip) {
        const double phi = std::numbers::pi * (1.0 + rule.nodes[ip]);
        const double wp = std::numbers::pi * rule.weights[ip];
        const Point w = t * e3 + s * (std::cos(phi) * e1 + std::sin(phi) * e2);
        sum += wt * wp * f(w);
      }
    }
    return sum / (4.0 * std::numbers::pi);
  };

  int n = 16;
  double prev = value_at(n);
  int small_diffs = 0;
  double last_diff = std::abs(prev);
  while (n < max_nodes_per_axis) {
    n *= 2;
    const double cur = value_at(n);
    last_diff = std::abs(cur - prev);
    small_diffs = last_diff < abs_tol ? small_diffs + 1 : 0;
    if (small_diffs >= 2) return {cur, last_diff, n, true};
    prev = cur;
  }
  return {prev, last_diff, n, false};
}

}  // namespace mobq
