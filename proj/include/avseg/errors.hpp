#pragma once

#include <stdexcept>
#include <string>

namespace avseg {

/// Base of every exception thrown by the library. The CLI maps each subclass
/// onto a process exit code.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Tensor shapes do not agree for the requested operation.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// An argument is outside the operation's documented domain.
class ParameterError : public Error {
 public:
  using Error::Error;
};

/// A configuration document or a module configuration is invalid.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Input data violates its schema (e.g. labels out of range).
class DataError : public Error {
 public:
  using Error::Error;
};

/// File system or file format failure.
class IoError : public Error {
 public:
  using Error::Error;
};

/// A loss or parameter became non-finite during optimisation.
class DivergenceError : public Error {
 public:
  using Error::Error;
};

/// A caller broke an API contract (e.g. non-scalar loss handed to backward).
class ContractError : public Error {
 public:
  using Error::Error;
};

/// A stored artifact (checkpoint, dataset) does not match the configuration
/// it is being used with.
class ArtifactMismatch : public Error {
 public:
  using Error::Error;
};

}  // namespace avseg
