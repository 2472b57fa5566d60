#pragma once

#include <stdexcept>
#include <string>

namespace fimguard {

/// Root of every exception thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Operand shapes are incompatible with the operation (programming error).
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Input outside the mathematical domain of a primitive (e.g. log of 0).
class DomainError : public Error {
 public:
  using Error::Error;
};

/// A file does not follow the expected binary layout.
class FormatError : public Error {
 public:
  using Error::Error;
};

/// Two inputs that must agree do not (e.g. image and label counts).
class ConsistencyError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

/// Checkpoint is unreadable, corrupt, or does not match the architecture.
class CheckpointError : public Error {
 public:
  using Error::Error;
};

/// Iterative numerical routine failed (e.g. eigensolver non-convergence).
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Training produced a non-finite loss.
class DivergenceError : public NumericError {
 public:
  using NumericError::NumericError;
};

/// A ratio or mean was requested over an empty sample set.
class EmptySetError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

}  // namespace fimguard
