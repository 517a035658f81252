#pragma once

#include <stdexcept>
#include <string>

namespace lfs {

// Error taxonomy shared by the whole library. The CLI maps ArgumentError,
// ShapeError, FormatError, ConfigError and IoError to exit code 2 and
// NumericError to exit code 3.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ArgumentError : public Error {
 public:
  using Error::Error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class FormatError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

// Non-finite values or failed numeric invariants at runtime.
class NumericError : public Error {
 public:
  using Error::Error;
};

}  // namespace lfs
