#pragma once

#include <stdexcept>
#include <string>

namespace a2m {

/// Base of every error the engine throws. `kind()` is a stable snake_case
/// tag used as the machine-parseable prefix of CLI error lines.
class Error : public std::runtime_error {
 public:
  Error(std::string kind, const std::string& message)
      : std::runtime_error(message), kind_(std::move(kind)) {}

  const std::string& kind() const noexcept { return kind_; }

 private:
  std::string kind_;
};

struct DimensionError : Error {
  explicit DimensionError(const std::string& m) : Error("dimension_error", m) {}
};

struct ValidationError : Error {
  explicit ValidationError(const std::string& m) : Error("validation_error", m) {}
};

struct UsageError : Error {
  explicit UsageError(const std::string& m) : Error("usage_error", m) {}
};

struct NumericError : Error {
  explicit NumericError(const std::string& m) : Error("numeric_error", m) {}
};

struct ParseError : Error {
  explicit ParseError(const std::string& m) : Error("parse_error", m) {}
};

struct FormatError : Error {
  explicit FormatError(const std::string& m) : Error("format_error", m) {}
};

struct IoError : Error {
  explicit IoError(const std::string& m) : Error("io_error", m) {}
};

}  // namespace a2m
