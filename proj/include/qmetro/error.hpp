#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace qmetro {

/// Base of every error thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Input / configuration problems. The CLI maps these to exit code 2.
class ConfigError : public Error {
 public:
  using Error::Error;
};

class ShapeError : public ConfigError {
 public:
  using ConfigError::ConfigError;
};

class DegenerateGridError : public ConfigError {
 public:
  using ConfigError::ConfigError;
};

class InvalidOutcomeError : public ConfigError {
 public:
  using ConfigError::ConfigError;
};

class ShiftUnsupportedError : public ConfigError {
 public:
  using ConfigError::ConfigError;
};

class DomainError : public ConfigError {
 public:
  using ConfigError::ConfigError;
};

class AlignmentError : public ConfigError {
 public:
  using ConfigError::ConfigError;
};

class InsufficientDataError : public ConfigError {
 public:
  using ConfigError::ConfigError;
};

class InvalidPriorError : public ConfigError {
 public:
  using ConfigError::ConfigError;
};

/// Malformed file. Carries the 1-based line and column where parsing stopped.
class ParseError : public ConfigError {
 public:
  ParseError(const std::string& source, std::size_t line, std::size_t column,
             const std::string& what)
      : ConfigError(source + ":" + std::to_string(line) + ":" + std::to_string(column) +
                    ": " + what),
        line_(line),
        column_(column) {}

  std::size_t line() const noexcept { return line_; }
  std::size_t column() const noexcept { return column_; }

 private:
  std::size_t line_;
  std::size_t column_;
};

// Numerical failures. The CLI maps these to exit code 3.
class NumericalError : public Error {
 public:
  using Error::Error;
};

class InvalidModelError : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

class DegenerateProbeError : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

class PriorRecoveryError : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

/// All particles received zero weight in a Bayesian update.
class DegenerateUpdateError : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

}  // namespace qmetro
