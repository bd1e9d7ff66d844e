#pragma once

#include <stdexcept>
#include <string>

namespace blockrlc {

// Invalid argument or a computation that is undefined for its inputs
// (degenerate geometric, empty PMF, impossible conditioning, ...).
class DomainError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// A numerical routine failed to reach its tolerance.
class SolverError : public std::runtime_error {
 public:
  SolverError(const std::string& what, double residual)
      : std::runtime_error(what), residual_(residual) {}

  double residual() const noexcept { return residual_; }

 private:
  double residual_;
};

// Rejected run configuration (malformed JSON, bad lengths, bad values).
class ConfigError : public DomainError {
 public:
  using DomainError::DomainError;
};

// Reading or writing a file failed.
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace blockrlc
