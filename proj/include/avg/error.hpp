#pragma once

#include <stdexcept>
#include <string>

namespace avg {

// Error taxonomy shared by the library, the CLI and the python bindings.
// ContractError: a caller violated a documented precondition.
// ConfigError:   an invalid configuration value or key.
// ParseError:    malformed input text/binary (carries location when known).
// ValidationError: well-formed input that violates a semantic invariant.
// IoError:       filesystem / OS failures.
// StateError:    run-directory or resume conflicts (CLI exit code 3).
// NumericError:  NaN guards and divergence aborts.

class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

class ContractError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class ParseError : public Error {
 public:
  using Error::Error;
};

class ValidationError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

class StateError : public Error {
 public:
  using Error::Error;
};

class NumericError : public Error {
 public:
  using Error::Error;
};

// A CTC target that no alignment of the given length can produce.
class CtcInfeasibleError : public ContractError {
 public:
  using ContractError::ContractError;
};

#define AVG_CHECK(cond, exc, msg)            \
  do {                                       \
    if (!(cond)) throw exc(std::string(msg)); \
  } while (0)

}  // namespace avg
