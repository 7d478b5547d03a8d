#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <utility>

namespace fairlens {

/// Failure categories shared by every module. The CLI maps these onto exit codes.
enum class ErrorKind {
  invalid_argument,   // precondition on a value (negative gamma, zero norm, NaN, ...)
  shape_mismatch,     // dimensions or lengths disagree
  degenerate,         // statistic undefined for this input (zero variance, empty span)
  not_distribution,   // a row or vector that must be a probability distribution is not
  convergence,        // iterative solver ran out of iterations
  parse,              // malformed interchange/manifest/CSV input
  schema,             // well-formed input that violates a record schema
  not_found,          // unknown dataset/config, missing file
};

inline const char* to_string(ErrorKind kind) noexcept {
  switch (kind) {
    case ErrorKind::invalid_argument: return "invalid_argument";
    case ErrorKind::shape_mismatch: return "shape_mismatch";
    case ErrorKind::degenerate: return "degenerate";
    case ErrorKind::not_distribution: return "not_distribution";
    case ErrorKind::convergence: return "convergence";
    case ErrorKind::parse: return "parse";
    case ErrorKind::schema: return "schema";
    case ErrorKind::not_found: return "not_found";
  }
  return "unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

/// Error raised while reading line- or row-oriented input. `line` is 1-based; 0 means
/// the location is not tied to a line (e.g. a missing file).
class InputError : public Error {
 public:
  InputError(ErrorKind kind, std::size_t line, std::string field, const std::string& message)
      : Error(kind, line ? "line " + std::to_string(line) + ": " + message : message),
        line_(line),
        field_(std::move(field)) {}

  std::size_t line() const noexcept { return line_; }
  const std::string& field() const noexcept { return field_; }

 private:
  std::size_t line_;
  std::string field_;
};

namespace detail {

[[noreturn]] inline void fail(ErrorKind kind, const std::string& message) {
  throw Error(kind, message);
}

inline void require(bool condition, ErrorKind kind, const char* message) {
  if (!condition) throw Error(kind, message);
}

}  // namespace detail
}  // namespace fairlens
