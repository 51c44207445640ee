#pragma once

#include <stdexcept>
#include <string>

namespace cto {

/// Base class for all toolkit errors.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Dimension or shape mismatch between containers.
struct ShapeError : Error {
  using Error::Error;
};

/// A value falls outside its declared interval.
struct RangeError : Error {
  using Error::Error;
};

/// Invalid argument to an operation (counts, indices, flags).
struct ArgumentError : Error {
  using Error::Error;
};

/// Degenerate or insufficient data (constant columns, too few rows).
struct DataError : Error {
  using Error::Error;
};

/// Linear-algebra failure, typically a covariance factorization.
struct NumericalError : Error {
  using Error::Error;
};

/// Hyperparameter estimation could not produce a usable result.
struct FitError : Error {
  using Error::Error;
};

/// Operation invoked out of sequence or on an unready object.
struct StateError : Error {
  using Error::Error;
};

/// Could not find a usable starting point for a Markov chain.
struct InitializationError : Error {
  using Error::Error;
};

/// Convergence diagnostic cannot be computed from the given chains.
struct DiagnosticError : Error {
  using Error::Error;
};

/// Malformed or inconsistent run configuration.
struct ConfigError : Error {
  using Error::Error;
};

/// File ingestion failure (missing columns, bad cells, out-of-range rows).
struct IngestError : Error {
  using Error::Error;
};

}  // namespace cto
