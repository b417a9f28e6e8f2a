#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace salign {

enum class ErrorKind {
  Shape,
  Numeric,
  Contract,
  Validation,
  Io,
  Parse,
  TrainingDiverged,
  OracleInvalid,
  Unsupported,
  Precondition,
};

/// Base of every error thrown by the library. `kind()` drives CLI exit codes.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

class ShapeError : public Error {
 public:
  explicit ShapeError(const std::string& what) : Error(ErrorKind::Shape, what) {}
};

class NumericError : public Error {
 public:
  explicit NumericError(const std::string& what)
      : Error(ErrorKind::Numeric, what) {}
};

class ContractError : public Error {
 public:
  explicit ContractError(const std::string& what)
      : Error(ErrorKind::Contract, what) {}
};

class ValidationError : public Error {
 public:
  explicit ValidationError(const std::string& what)
      : Error(ErrorKind::Validation, what) {}
};

class IoError : public Error {
 public:
  explicit IoError(const std::string& what) : Error(ErrorKind::Io, what) {}
};

class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t line, std::size_t column)
      : Error(ErrorKind::Parse, what + " (line " + std::to_string(line) +
                                    ", column " + std::to_string(column) + ")"),
        line_(line),
        column_(column) {}
  std::size_t line() const noexcept { return line_; }
  std::size_t column() const noexcept { return column_; }

 private:
  std::size_t line_;
  std::size_t column_;
};

class TrainingDiverged : public Error {
 public:
  TrainingDiverged(std::size_t step, const std::string& detail)
      : Error(ErrorKind::TrainingDiverged,
              "training diverged at step " + std::to_string(step) + ": " +
                  detail),
        step_(step) {}
  std::size_t step() const noexcept { return step_; }

 private:
  std::size_t step_;
};

class OracleInvalid : public Error {
 public:
  explicit OracleInvalid(const std::string& what)
      : Error(ErrorKind::OracleInvalid, what) {}
};

class UnsupportedTask : public Error {
 public:
  explicit UnsupportedTask(const std::string& what)
      : Error(ErrorKind::Unsupported, what) {}
};

class PreconditionError : public Error {
 public:
  PreconditionError(const std::string& what, double measured)
      : Error(ErrorKind::Precondition, what), measured_(measured) {}
  double measured() const noexcept { return measured_; }

 private:
  double measured_;
};

}  // namespace salign
