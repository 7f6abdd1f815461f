#pragma once

#include <stdexcept>
#include <string>

namespace fknne {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed or inconsistent experiment configuration.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Invalid input data: bad grids, size mismatches, constant covariates, ...
class DataError : public Error {
 public:
  using Error::Error;
};

/// A semi-metric could not be evaluated on the given curves (e.g. a zero
/// denominator area). Featurization flags the tuple instead of aborting.
class DegenerateInputError : public DataError {
 public:
  using DataError::DataError;
};

/// Non-finite objective or gradient inside the solver.
class NumericError : public Error {
 public:
  using Error::Error;
};

}  // namespace fknne
