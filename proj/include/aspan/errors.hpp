#pragma once

#include <stdexcept>
#include <string>

namespace aspan {

// Root of every error the library throws. CLI maps subclasses to exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Shapes or extents that do not chain.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// Out-of-domain scalar parameter (non-positive temperature, bad stride, ...).
class ParameterError : public Error {
 public:
  using Error::Error;
};

// Caller-supplied data violates a precondition (image extent, config).
class InputError : public Error {
 public:
  using Error::Error;
};

// Corrupt or truncated file.
class FormatError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

// NaN/Inf where finite values are required.
class NumericError : public Error {
 public:
  using Error::Error;
};

}  // namespace aspan
