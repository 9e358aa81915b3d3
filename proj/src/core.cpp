#include "mobq/core.hpp"

#include <cmath>
#include <limits>
#include <numbers>
#include <sstream>

namespace mobq {

namespace {

// splitmix64 finalizer; used to decorrelate (seed, stream) pairs.
std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

}  // namespace

Rng::Rng(std::uint64_t seed, std::uint64_t stream)
    : seed_(seed), stream_(stream), engine_(mix64(mix64(seed) ^ mix64(~stream))) {}

Rng Rng::split(std::uint64_t substream) const {
  return Rng(seed_, mix64(stream_ ^ mix64(substream + 1)));
}

std::uint64_t Rng::next_u64() { return engine_(); }

double Rng::uniform() {
  // 53 random mantissa bits -> [0, 1)
  return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double Rng::uniform(double a, double b) { return a + (b - a) * uniform(); }

double Rng::normal() {
  // Box-Muller; u clamped away from 0 so log stays finite.
  double u = uniform();
  if (u <= 0.0) u = 0x1.0p-53;
  const double v = uniform();
  return std::sqrt(-2.0 * std::log(u)) * std::cos(2.0 * std::numbers::pi * v);
}

Measure Measure::uniform_box(Eigen::VectorXd lower, Eigen::VectorXd upper) {
  if (lower.size() == 0 || lower.size() != upper.size())
    throw InvalidArgumentError("uniform_box: bounds must be nonempty and equally sized");
  for (Eigen::Index i = 0; i < lower.size(); ++i) {
    if (!(lower[i] < upper[i]))
      throw InvalidArgumentError("uniform_box: lower must be strictly below upper componentwise");
  }
  Measure m;
  m.v_ = UniformBox{std::move(lower), std::move(upper)};
  return m;
}

Measure Measure::uniform_box(double lower, double upper) {
  Eigen::VectorXd lo(1), hi(1);
  lo << lower;
  hi << upper;
  return uniform_box(lo, hi);
}

Measure Measure::uniform_sphere() {
  Measure m;
  m.v_ = UniformSphere{};
  return m;
}

int Measure::dimension() const {
  if (is_sphere()) return 3;
  return static_cast<int>(box().lower.size());
}

bool Measure::contains(const Point& x, double tol) const {
  if (x.size() != dimension()) return false;
  if (is_sphere()) return std::abs(x.norm() - 1.0) <= tol;
  const auto& b = box();
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    if (x[i] < b.lower[i] - tol || x[i] > b.upper[i] + tol) return false;
  }
  return true;
}

Design::Design(std::vector<PointList> per_output) : per_output_(std::move(per_output)) {
  if (per_output_.empty()) throw InvalidArgumentError("Design: needs at least one output");
  for (const auto& pts : per_output_) {
    if (pts.empty()) throw InvalidArgumentError("Design: every output needs at least one point");
  }
  dimension_ = static_cast<int>(per_output_[0][0].size());
  if (dimension_ < 1) throw InvalidArgumentError("Design: points must have dimension >= 1");
  for (const auto& pts : per_output_) {
    for (const auto& p : pts) {
      if (p.size() != dimension_)
        throw DimensionMismatchError("Design: all points must share one dimension");
      if (!p.allFinite()) throw InvalidArgumentError("Design: points must be finite");
    }
    total_ += static_cast<int>(pts.size());
  }
  shared_ = true;
  for (std::size_t d = 1; d < per_output_.size() && shared_; ++d) {
    if (per_output_[d].size() != per_output_[0].size()) {
      shared_ = false;
      break;
    }
    for (std::size_t i = 0; i < per_output_[d].size(); ++i) {
      if (per_output_[d][i] != per_output_[0][i]) {
        shared_ = false;
        break;
      }
    }
  }
  if (per_output_.size() == 1) shared_ = true;
}

Design Design::shared_design(PointList points, int outputs) {
  if (outputs < 1) throw InvalidArgumentError("shared_design: outputs must be >= 1");
  std::vector<PointList> per(outputs, points);
  return Design(std::move(per));
}

int Design::block_offset(int output) const {
  int off = 0;
  for (int d = 0; d < output; ++d) off += count(d);
  return off;
}

Dataset::Dataset(Design design_, Eigen::VectorXd values_)
    : design(std::move(design_)), values(std::move(values_)) {
  if (values.size() != design.total_points())
    throw DimensionMismatchError("Dataset: values length must equal total design points");
}

Eigen::VectorXd Dataset::output_values(int output) const {
  return values.segment(design.block_offset(output), design.count(output));
}

Eigen::VectorXd flatten_values(const Design& design, const std::vector<Eigen::VectorXd>& per_output) {
  if (static_cast<int>(per_output.size()) != design.outputs())
    throw DimensionMismatchError("flatten_values: one value vector per output required");
  Eigen::VectorXd out(design.total_points());
  int off = 0;
  for (int d = 0; d < design.outputs(); ++d) {
    if (per_output[d].size() != design.count(d))
      throw DimensionMismatchError("flatten_values: value count mismatch for an output");
    out.segment(off, design.count(d)) = per_output[d];
    off += design.count(d);
  }
  return out;
}

std::vector<Eigen::VectorXd> unflatten_values(const Design& design, const Eigen::VectorXd& values) {
  if (values.size() != design.total_points())
    throw DimensionMismatchError("unflatten_values: length mismatch");
  std::vector<Eigen::VectorXd> out;
  out.reserve(design.outputs());
  int off = 0;
  for (int d = 0; d < design.outputs(); ++d) {
    out.push_back(values.segment(off, design.count(d)));
    off += design.count(d);
  }
  return out;
}

PointList equidistant_grid(int n, double a, double b) {
  if (n < 2) throw InvalidArgumentError("equidistant_grid: need at least two points");
  if (!(a < b)) throw InvalidArgumentError("equidistant_grid: need a < b");
  PointList pts;
  pts.reserve(n);
  for (int i = 0; i < n; ++i) {
    Point p(1);
    p[0] = a + static_cast<double>(i) * (b - a) / static_cast<double>(n - 1);
    pts.push_back(p);
  }
  return pts;
}

PointList sample_measure(const Measure& measure, int n, Rng& rng) {
  if (n < 1) throw InvalidArgumentError("sample_measure: need n >= 1");
  PointList pts;
  pts.reserve(n);
  if (measure.is_box()) {
    const auto& b = measure.box();
    const int p = measure.dimension();
    for (int i = 0; i < n; ++i) {
      Point x(p);
      for (int k = 0; k < p; ++k) x[k] = rng.uniform(b.lower[k], b.upper[k]);
      pts.push_back(x);
    }
  } else {
    for (int i = 0; i < n; ++i) {
      Point x(3);
      double norm = 0.0;
      do {
        x << rng.normal(), rng.normal(), rng.normal();
        norm = x.norm();
      } while (norm < 1e-8);
      pts.push_back(x / norm);
    }
  }
  return pts;
}

GeometryStats geometry_stats(const PointList& points, const PointList& domain_samples) {
  if (points.size() < 2) throw InvalidArgumentError("geometry_stats: need at least two points");
  if (domain_samples.empty()) throw InvalidArgumentError("geometry_stats: empty domain proxy");

  double min_pair = std::numeric_limits<double>::infinity();
  for (std::size_t j = 0; j < points.size(); ++j) {
    for (std::size_t k = j + 1; k < points.size(); ++k) {
      min_pair = std::min(min_pair, (points[j] - points[k]).norm());
    }
  }
  const double q = 0.5 * min_pair;
  if (q <= 0.0) throw DegenerateDesignError("geometry_stats: duplicate points (separation radius 0)");

  double h = 0.0;
  for (const auto& y : domain_samples) {
    double nearest = std::numeric_limits<double>::infinity();
    for (const auto& x : points) nearest = std::min(nearest, (y - x).norm());
    h = std::max(h, nearest);
  }
  return GeometryStats{h, q, h / q};
}

PointList domain_proxy(const Measure& measure, int count, Rng& rng) {
  if (count < 1) throw InvalidArgumentError("domain_proxy: need count >= 1");
  if (measure.is_sphere()) return sample_measure(measure, count, rng);

  const auto& b = measure.box();
  const int p = measure.dimension();
  // Per-axis resolution so the grid has ~count points in total.
  const int per_axis = std::max(2, static_cast<int>(std::ceil(std::pow(static_cast<double>(count), 1.0 / p))));
  PointList pts;
  std::vector<int> idx(p, 0);
  while (true) {
    Point x(p);
    for (int k = 0; k < p; ++k)
      x[k] = b.lower[k] + (b.upper[k] - b.lower[k]) * idx[k] / static_cast<double>(per_axis - 1);
    pts.push_back(x);
    int k = 0;
    for (; k < p; ++k) {
      if (++idx[k] < per_axis) break;
      idx[k] = 0;
    }
    if (k == p) break;
  }
  return pts;
}

}  // namespace mobq
