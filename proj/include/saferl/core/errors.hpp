#pragma once

#include <stdexcept>
#include <string>

namespace saferl {

// Validation-type failures (bad shapes, bad arguments, malformed files).
struct ValidationError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct DimensionError : ValidationError {
  using ValidationError::ValidationError;
};

struct ParameterError : ValidationError {
  using ValidationError::ValidationError;
};

struct UsageError : ValidationError {
  using ValidationError::ValidationError;
};

struct SizeError : ValidationError {
  using ValidationError::ValidationError;
};

struct GenerationError : ValidationError {
  using ValidationError::ValidationError;
};

// Numeric-type failures (divergence, non-finite values, degenerate systems).
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct DivergenceError : NumericError {
  using NumericError::NumericError;
};

struct FeasibilityError : NumericError {
  using NumericError::NumericError;
};

}  // namespace saferl
