#pragma once

#include <stdexcept>
#include <string>

namespace chanlab {

// Base for every error raised by the library. Callers that only need to
// report a failure can catch this; the subclasses let the CLI map failures
// onto exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Invalid configuration or arguments (maps to CLI exit code 1).
class ConfigError : public Error {
 public:
  using Error::Error;
};

// A sequence does not fit into the model's context window.
class LengthError : public Error {
 public:
  using Error::Error;
};

// Loss or gradient became non-finite.
class NumericalError : public Error {
 public:
  using Error::Error;
};

// Malformed input file.
class SchemaError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace chanlab
