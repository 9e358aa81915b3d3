#pragma once

#include <cstdint>
#include <random>
#include <variant>
#include <vector>

#include <Eigen/Core>

#include "mobq/errors.hpp"

namespace mobq {

using Point = Eigen::VectorXd;
using PointList = std::vector<Point>;

// Deterministic, splittable random stream. A (seed, stream) pair fully
// determines the sample sequence on every platform: the engine is
// std::mt19937_64 (bit-exact per the standard) and the uniform/normal
// transforms below avoid std::*_distribution, whose output is
// implementation-defined.
class Rng {
 public:
  explicit Rng(std::uint64_t seed, std::uint64_t stream = 0);

  std::uint64_t seed() const { return seed_; }
  std::uint64_t stream() const { return stream_; }

  // Independent child stream; deterministic in (seed, stream, substream).
  Rng split(std::uint64_t substream) const;

  std::uint64_t next_u64();
  double uniform();                  // [0, 1)
  double uniform(double a, double b);
  double normal();                   // standard normal, Box-Muller

 private:
  std::uint64_t seed_;
  std::uint64_t stream_;
  std::mt19937_64 engine_;
};

struct UniformBox {
  Eigen::VectorXd lower;
  Eigen::VectorXd upper;
};

struct UniformSphere {};  // uniform measure on the unit sphere in R^3

// Probability measure on the integration domain; integrates to one.
class Measure {
 public:
  static Measure uniform_box(Eigen::VectorXd lower, Eigen::VectorXd upper);
  static Measure uniform_box(double lower, double upper);  // 1-D convenience
  static Measure uniform_sphere();

  bool is_box() const { return std::holds_alternative<UniformBox>(v_); }
  bool is_sphere() const { return std::holds_alternative<UniformSphere>(v_); }
  const UniformBox& box() const { return std::get<UniformBox>(v_); }

  int dimension() const;
  bool contains(const Point& x, double tol = 1e-9) const;

 private:
  std::variant<UniformBox, UniformSphere> v_;
};

// Per-output point sets X = {X_d}. `shared()` is true iff every output uses
// the identical ordered point list.
class Design {
 public:
  explicit Design(std::vector<PointList> per_output);
  static Design shared_design(PointList points, int outputs);

  int outputs() const { return static_cast<int>(per_output_.size()); }
  int dimension() const { return dimension_; }
  bool shared() const { return shared_; }
  const PointList& points(int output) const { return per_output_.at(output); }
  const std::vector<PointList>& per_output() const { return per_output_; }

  int count(int output) const { return static_cast<int>(per_output_.at(output).size()); }
  int total_points() const { return total_; }

  // Start of output d's block in the concatenated (output-major) ordering.
  int block_offset(int output) const;

 private:
  std::vector<PointList> per_output_;
  int dimension_ = 0;
  int total_ = 0;
  bool shared_ = false;
};

// Function evaluations stacked output-major: all values of output 1, then
// output 2, ... matching the Gram block layout.
struct Dataset {
  Design design;
  Eigen::VectorXd values;

  Dataset(Design design_, Eigen::VectorXd values_);

  // Values of a single output as a contiguous segment.
  Eigen::VectorXd output_values(int output) const;
};

// Stacks per-output value vectors into the output-major layout.
Eigen::VectorXd flatten_values(const Design& design, const std::vector<Eigen::VectorXd>& per_output);
std::vector<Eigen::VectorXd> unflatten_values(const Design& design, const Eigen::VectorXd& values);

struct GeometryStats {
  double fill_distance;
  double separation_radius;
  double mesh_ratio;
};

// N points a + (i-1)(b-a)/(N-1) for i = 1..N.
PointList equidistant_grid(int n, double a, double b);

PointList sample_measure(const Measure& measure, int n, Rng& rng);

// Fill distance h (max over proxy points of the nearest-X distance),
// separation radius q, mesh ratio h/q. The proxy stands in for the domain;
// see domain_proxy for the defaults.
GeometryStats geometry_stats(const PointList& points, const PointList& domain_samples);

// Default fill-distance proxy: quasi-regular grid for boxes, IID points for
// the sphere. The exact supremum is not computable; proxy density bounds the
// fill-distance underestimate by the proxy's own spacing.
PointList domain_proxy(const Measure& measure, int count, Rng& rng);

}  // namespace mobq
