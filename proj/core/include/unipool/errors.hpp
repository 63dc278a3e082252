#pragma once

#include <stdexcept>
#include <string>

namespace unipool {

/// Base class for all unipool errors.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid shapes, mismatched extents, malformed arguments. Maps to exit code 1.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Bad CLI flags or config keys. Maps to exit code 1.
class UsageError : public Error {
 public:
  using Error::Error;
};

/// Missing, truncated or corrupt input data and checkpoints. Maps to exit code 2.
class DataError : public Error {
 public:
  using Error::Error;
};

/// Non-finite values, divergence, gradient-check violations. Maps to exit code 3.
class NumericError : public Error {
 public:
  using Error::Error;
};

}  // namespace unipool
