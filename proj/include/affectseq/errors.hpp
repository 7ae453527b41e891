#pragma once

#include <stdexcept>
#include <string>

namespace affectseq {

/// Base of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Shape mismatch, empty axis, broken structural precondition.
class StructuralError : public Error {
 public:
  using Error::Error;
};

/// Malformed or inconsistent input data (files, labels, masks).
class DataError : public Error {
 public:
  using Error::Error;
};

/// Invalid configuration, or a configuration that disagrees with a checkpoint.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// A checkpoint that does not fit the requested task or model layout.
class CheckpointMismatchError : public ConfigError {
 public:
  using ConfigError::ConfigError;
};

/// Non-finite loss or gradient, failed gradient check.
class NumericalError : public Error {
 public:
  using Error::Error;
};

}  // namespace affectseq
