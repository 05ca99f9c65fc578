#pragma once

#include <stdexcept>
#include <string>

namespace mdr {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Operand shapes are incompatible with the requested operation.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// An input sits on a singularity of the math (zero-norm vector, empty batch, ...).
class DegenerateInputError : public Error {
 public:
  using Error::Error;
};

/// A file or stream does not follow the expected on-disk layout.
class FormatError : public Error {
 public:
  using Error::Error;
};

/// A configuration value is missing, malformed or out of range.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// A computation produced a non-finite value or failed a numeric check.
class NumericError : public Error {
 public:
  using Error::Error;
};

}  // namespace mdr
