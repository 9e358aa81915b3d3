#include <doctest.h>

#include <cmath>
#include <numbers>

#include <Eigen/Eigenvalues>

#include "mobq/quadrature.hpp"
#include "mobq/testbeds.hpp"

#include "oracles.hpp"

using namespace mobq;

TEST_SUITE("testbeds") {

TEST_CASE("step function values") {
  CHECK(step_function(0.5, Fidelity::high) == -1.0);
  CHECK(step_function(1.0, Fidelity::low) == 0.0);  // boundary is inclusive
  CHECK(step_function(1.0, Fidelity::high) == -1.0);
  CHECK(step_function(1.5, Fidelity::high) == 2.0);
  CHECK(step_function(1.5, Fidelity::low) == 1.0);
  CHECK_THROWS_AS(step_function(2.5, Fidelity::low), DomainError);
}

TEST_CASE("forrester function values and branch offsets") {
  CHECK(forrester_jump(0.0, Fidelity::low) ==
        doctest::Approx(std::sin(-4.0) / 4.0 - 10.0).epsilon(1e-15));
  CHECK(forrester_jump(0.0, Fidelity::high) ==
        doctest::Approx(2.0 * forrester_jump(0.0, Fidelity::low) + 20.0).epsilon(1e-15));

  // Branch offsets across x = 1/2: +3 in the low fidelity, +4 more on top of
  // the low-fidelity relation in the high fidelity.
  const double x = 0.5 + 1e-9;
  const double base = (3.0 * x - 1.0) * (3.0 * x - 1.0) * std::sin(12.0 * x - 4.0) / 4.0 +
                      10.0 * (x - 1.0);
  CHECK(forrester_jump(x, Fidelity::low) == doctest::Approx(base + 3.0).epsilon(1e-12));
  const double continued = 2.0 * forrester_jump(x, Fidelity::low) - 20.0 * (x - 1.0);
  CHECK(forrester_jump(x, Fidelity::high) - continued == doctest::Approx(4.0).epsilon(1e-9));

  CHECK_THROWS_AS(forrester_jump(1.2, Fidelity::low), DomainError);
}

TEST_CASE("allen-cahn solution satisfies boundaries and the residual contract") {
  const auto sol = allen_cahn_solve(0.1, 401);
  CHECK(sol.values.front() == 1.0);
  CHECK(sol.values.back() == -1.0);
  CHECK(sol.residual_norm < 1e-8);

  // Interpolation reproduces grid values exactly.
  CHECK(sol(sol.grid[40]) == doctest::Approx(sol.values[40]).epsilon(1e-13));

  // Grid convergence: doubling the resolution moves the solution little.
  const auto fine = allen_cahn_solve(0.1, 801);
  double max_diff = 0.0;
  for (int i = 0; i <= 100; ++i) {
    const double x = 10.0 * i / 100.0;
    max_diff = std::max(max_diff, std::abs(sol(x) - fine(x)));
  }
  CHECK(max_diff < 1e-3);

  // Determinism.
  const auto again = allen_cahn_solve(0.1, 401);
  CHECK(again.values == sol.values);

  CHECK_THROWS_AS(allen_cahn_solve(-1.0, 401), InvalidArgumentError);
  CHECK_THROWS_AS(allen_cahn_solve(0.1, 10), InvalidArgumentError);
}

TEST_CASE("allen-cahn residual is the discretized equation") {
  const auto sol = allen_cahn_solve(2.0, 201);
  const double h = sol.grid[1] - sol.grid[0];
  for (int j = 1; j < 200; j += 37) {
    const double lap = (sol.values[j - 1] - 2.0 * sol.values[j] + sol.values[j + 1]) / (h * h);
    const double res = 2.0 * lap + sol.values[j] - std::pow(sol.values[j], 3) -
                       std::sin(sol.grid[j]);
    CHECK(std::abs(res) < 1e-8);
  }
}

TEST_CASE("illumination integrand clamps on the back hemisphere") {
  const auto scene = default_illumination_scene(5, 0.005 * std::numbers::pi);
  const Point& w0 = scene.cameras[0];
  Point ref(3);
  ref << 0.0, 1.0, 0.0;
  Point ortho = (ref - ref.dot(w0) * w0).normalized();
  CHECK(illumination_integrand(scene, 0, 0, ortho) == 0.0);
  CHECK(illumination_integrand(scene, 1, 0, Point(-w0)) == 0.0);
  CHECK(illumination_integrand(scene, 2, 0, w0) > 0.0);
  CHECK_THROWS_AS(illumination_integrand(scene, 5, 0, w0), InvalidArgumentError);
  CHECK_THROWS_AS(illumination_integrand(scene, 0, 9, w0), InvalidArgumentError);
}

TEST_CASE("unit-map unit-reflectance integrand is the clamp itself") {
  IlluminationScene scene;
  scene.channels[0] = EnvironmentMap{{{1.0, 0.0, (Point(3) << 0, 0, 1).finished()}}};
  scene.channels[1] = scene.channels[0];
  scene.channels[2] = scene.channels[0];
  scene.normal = (Point(3) << 0, 0, 1).finished();
  scene.cameras = camera_ring(scene.normal, 1, 0.01);
  CHECK(illumination_integrand(scene, 0, 0, scene.cameras[0]) == doctest::Approx(1.0));
}

TEST_CASE("single-lobe integrand peaks near the lobe direction") {
  IlluminationScene scene;
  const Point mu = (Point(3) << 0.3, 0.1, 0.95).finished().normalized();
  scene.channels[0] = EnvironmentMap{{{1.0, 40.0, mu}}};
  scene.channels[1] = scene.channels[0];
  scene.channels[2] = scene.channels[0];
  scene.normal = (Point(3) << 0, 0, 1).finished();
  scene.cameras = camera_ring(scene.normal, 1, 0.01);

  double best = -1.0;
  Point argmax(3);
  for (const auto& w : fibonacci_sphere(20000)) {
    const double v = illumination_integrand(scene, 0, 0, w);
    if (v > best) {
      best = v;
      argmax = w;
    }
  }
  CHECK((argmax - mu).norm() < 0.1);
}

TEST_CASE("camera ring spacing matches the requested angle") {
  const Point base = (Point(3) << 0.2, -0.1, 0.97).finished().normalized();
  const double step = 0.005 * std::numbers::pi;
  const auto ring = camera_ring(base, 5, step);
  REQUIRE(ring.size() == 5);
  for (const auto& w : ring) CHECK(std::abs(w.norm() - 1.0) < 1e-12);
  for (int i = 0; i + 1 < 5; ++i) {
    CHECK(std::acos(ring[i].dot(ring[i + 1])) == doctest::Approx(step).epsilon(1e-10));
  }
  const auto single = camera_ring(base, 1, step);
  CHECK((single[0] - base).norm() < 1e-15);
}

TEST_CASE("camera covariance is a unit-diagonal positive definite matrix") {
  const Point base = (Point(3) << 0, 0, 1).finished();
  const auto ring = camera_ring(base, 5, 0.005 * std::numbers::pi);
  const Eigen::MatrixXd b = camera_covariance(ring);
  for (int i = 0; i < 5; ++i) CHECK(b(i, i) == 1.0);

  PointList antipodal = {base, Point(-base)};
  const Eigen::MatrixXd b2 = camera_covariance(antipodal);
  CHECK(b2(0, 1) == doctest::Approx(std::exp(-2.0)).epsilon(1e-15));

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(b, Eigen::EigenvaluesOnly);
  CHECK(es.eigenvalues().minCoeff() > 0.0);
}

}  // TEST_SUITE
