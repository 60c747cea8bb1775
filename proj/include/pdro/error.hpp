#pragma once

#include <stdexcept>
#include <string>

namespace pdro {

// Every library failure derives from Error so callers can map categories to exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class InputError : public Error {
 public:
  using Error::Error;
};

// Mismatched lengths or covariate widths; a kind of bad input.
class DimensionError : public InputError {
 public:
  using InputError::InputError;
};

class ParameterError : public Error {
 public:
  using Error::Error;
};

class NumericError : public Error {
 public:
  using Error::Error;
};

class TrainingError : public NumericError {
 public:
  using NumericError::NumericError;
};

// A treatment arm has too few rows to fit its outcome regression.
class ArmCoverageError : public InputError {
 public:
  using InputError::InputError;
};

// A source label is out of range or has no rows.
class ClassCoverageError : public InputError {
 public:
  using InputError::InputError;
};

class PositivityError : public InputError {
 public:
  using InputError::InputError;
};

// Invalid experiment configuration or command-line usage.
class ConfigError : public Error {
 public:
  using Error::Error;
};

class ParseError : public InputError {
 public:
  ParseError(const std::string& what, std::size_t line)
      : InputError("line " + std::to_string(line) + ": " + what), line_(line) {}

  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

}  // namespace pdro
