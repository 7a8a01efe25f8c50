#pragma once

#include <stdexcept>
#include <string>

namespace gpmpc {

/// Cholesky factorization failed even after the full jitter ladder.
class FitError : public std::runtime_error {
 public:
  FitError(const std::string& what, double attempted_jitter)
      : std::runtime_error(what), attempted_jitter_(attempted_jitter) {}
  double attempted_jitter() const { return attempted_jitter_; }

 private:
  double attempted_jitter_;
};

/// Hyperparameter optimization could not produce a single valid fit.
class OptimizationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Numerical consistency violated beyond repair thresholds (e.g. a
/// predictive variance far below zero, or a covariance eigenvalue
/// below the clamping band).
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// QP / closed-form solve failed (singular normal matrix, dual unbounded).
class SolverError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Feedback-linearization transform evaluated outside its validity region.
class SingularTransformError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Not enough samples to build the requested dataset or model.
class InsufficientDataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace gpmpc
