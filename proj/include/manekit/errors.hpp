#pragma once

#include <stdexcept>
#include <string>

namespace manekit {

// Dimension or shape mismatch in user-supplied data.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Non-finite values or otherwise unusable evaluation results.
class EvaluationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// An algorithm ran but failed numerically (no convergence, step underflow,
// residual above tolerance).  Maps to exit code 1 in the command-line tool.
class NumericalFailure : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A mathematical hypothesis required by the requested operation does not hold
// at the supplied data (degenerate fiber Hessian, vanishing vector field,
// tangential section crossing).  Maps to exit code 2 in the tool.
class HypothesisViolation : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class IntegrationFailure : public NumericalFailure {
 public:
  using NumericalFailure::NumericalFailure;
};

class ConvergenceFailure : public NumericalFailure {
 public:
  using NumericalFailure::NumericalFailure;
};

class ConstructionFailure : public NumericalFailure {
 public:
  using NumericalFailure::NumericalFailure;
};

// Unparseable configuration input.  Maps to exit code 3 in the tool.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace manekit
