#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace mobq {

// Root of the library's exception hierarchy.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

class InvalidArgumentError : public Error {
 public:
  using Error::Error;
};

// Point set contains duplicates (separation radius is zero).
class DegenerateDesignError : public Error {
 public:
  using Error::Error;
};

// Input outside a kernel's valid domain (e.g. non-unit vector for a sphere kernel).
class DomainError : public Error {
 public:
  using Error::Error;
};

class DimensionMismatchError : public Error {
 public:
  using Error::Error;
};

// Every rung of the jitter ladder failed to factorize the Gram matrix.
class NotPositiveDefiniteError : public Error {
 public:
  NotPositiveDefiniteError(const std::string& msg, double min_eigenvalue_estimate)
      : Error(msg), min_eigenvalue_estimate(min_eigenvalue_estimate) {}
  double min_eigenvalue_estimate;
};

// Closed-form integral identity missing for a (kernel, measure) pair and the
// quadrature fallback was not enabled.
class UnsupportedIdentityError : public Error {
 public:
  using Error::Error;
};

class SolverFailedError : public Error {
 public:
  SolverFailedError(const std::string& msg, std::vector<double> residual_history)
      : Error(msg), residual_history(std::move(residual_history)) {}
  std::vector<double> residual_history;
};

class OptimizationFailedError : public Error {
 public:
  using Error::Error;
};

class AccuracyNotMetError : public Error {
 public:
  AccuracyNotMetError(const std::string& msg, double best_estimate, double achieved_accuracy)
      : Error(msg), best_estimate(best_estimate), achieved_accuracy(achieved_accuracy) {}
  double best_estimate;
  double achieved_accuracy;
};

// Numerical residue exceeded a sanity bound (e.g. posterior variance below the
// allowed negative clamp).
class InternalConsistencyError : public Error {
 public:
  using Error::Error;
};

class InvalidDataError : public Error {
 public:
  using Error::Error;
};

}  // namespace mobq
