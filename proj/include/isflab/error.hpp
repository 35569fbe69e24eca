#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace isflab {

// Base of every library error. Callers that only need a diagnostic can catch
// this; the CLI maps the concrete types onto exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Bad configuration, infeasible generation spec, bad flag value.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// A value violates a structural invariant (graph, pattern, filtration, ...).
class ValidationError : public Error {
 public:
  using Error::Error;
};

// Malformed token stream or text input. Carries the offending position.
class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t position)
      : Error(what + " (at position " + std::to_string(position) + ")"),
        position_(position) {}
  std::size_t position() const noexcept { return position_; }

 private:
  std::size_t position_;
};

// Decomposition part has more matches than the configured capacity.
class CapacityError : public Error {
 public:
  using Error::Error;
};

// Encoded sequence exceeds a configured maximum length.
class LengthError : public Error {
 public:
  using Error::Error;
};

// Re-verification of a stored dataset against the oracle failed.
class AuditError : public Error {
 public:
  using Error::Error;
};

// Training produced a non-finite loss.
class DivergenceError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace isflab
