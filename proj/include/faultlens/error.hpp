#pragma once

#include <stdexcept>
#include <string>

namespace faultlens {

/// Base class for every error raised by the library. `kind()` is a stable
/// machine-readable tag used by the CLI when reporting failures.
class Error : public std::runtime_error {
 public:
  Error(std::string kind, const std::string& message)
      : std::runtime_error(message), kind_(std::move(kind)) {}

  [[nodiscard]] const std::string& kind() const noexcept { return kind_; }

 private:
  std::string kind_;
};

class ShapeError : public Error {
 public:
  explicit ShapeError(const std::string& message) : Error("shape", message) {}
};

class NumericError : public Error {
 public:
  explicit NumericError(const std::string& message)
      : Error("numeric", message) {}
};

class InvalidArgument : public Error {
 public:
  explicit InvalidArgument(const std::string& message)
      : Error("invalid_argument", message) {}
};

class DataError : public Error {
 public:
  explicit DataError(const std::string& message) : Error("data", message) {}
};

/// Malformed input file; carries the 1-based row/column of the bad cell when
/// known (0 otherwise).
class ParseError : public Error {
 public:
  ParseError(const std::string& message, std::size_t row = 0,
             std::size_t col = 0)
      : Error("parse", message), row_(row), col_(col) {}

  [[nodiscard]] std::size_t row() const noexcept { return row_; }
  [[nodiscard]] std::size_t col() const noexcept { return col_; }

 private:
  std::size_t row_;
  std::size_t col_;
};

class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& message)
      : Error("config", message) {}
};

class IoError : public Error {
 public:
  explicit IoError(const std::string& message) : Error("io", message) {}
};

/// A pipeline stage ran before the stage that produces its input.
class MissingArtifact : public Error {
 public:
  MissingArtifact(const std::string& message, std::string prerequisite)
      : Error("missing_artifact", message),
        prerequisite_(std::move(prerequisite)) {}

  [[nodiscard]] const std::string& prerequisite() const noexcept {
    return prerequisite_;
  }

 private:
  std::string prerequisite_;
};

}  // namespace faultlens
