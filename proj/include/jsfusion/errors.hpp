#pragma once

#include <stdexcept>
#include <string>

namespace jsfusion {

// Every library failure derives from Error so callers can catch one type.
// Validation-class errors (shape, input, config, format) map to exit code 2
// in the CLI; everything else is a runtime failure.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
  virtual bool is_validation() const { return true; }
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

class InputError : public Error {
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

class ParseError : public Error {
 public:
  using Error::Error;
};

class DimensionError : public Error {
 public:
  using Error::Error;
};

class UsageError : public Error {
 public:
  using Error::Error;
  bool is_validation() const override { return false; }
};

class DivergenceError : public Error {
 public:
  using Error::Error;
  bool is_validation() const override { return false; }
};

class IoError : public Error {
 public:
  using Error::Error;
  bool is_validation() const override { return false; }
};

}  // namespace jsfusion
