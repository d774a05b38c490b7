#pragma once

#include <stdexcept>
#include <string>
#include <utility>

namespace candlab {

/// Base error for everything the library reports. `kind` is a short
/// machine-readable tag ("io", "format", "dimension", ...) that the CLI
/// copies into its error JSON.
class Error : public std::runtime_error {
 public:
  Error(std::string kind, const std::string& message, std::string context = {})
      : std::runtime_error(message), kind_(std::move(kind)), context_(std::move(context)) {}

  const std::string& kind() const noexcept { return kind_; }
  const std::string& context() const noexcept { return context_; }

 private:
  std::string kind_;
  std::string context_;
};

class IoError : public Error {
 public:
  explicit IoError(const std::string& message, std::string context = {})
      : Error("io", message, std::move(context)) {}
};

class FormatError : public Error {
 public:
  explicit FormatError(const std::string& message, std::string context = {})
      : Error("format", message, std::move(context)) {}
};

class DimensionError : public Error {
 public:
  explicit DimensionError(const std::string& message, std::string context = {})
      : Error("dimension", message, std::move(context)) {}
};

class InvalidArgument : public Error {
 public:
  explicit InvalidArgument(const std::string& message, std::string context = {})
      : Error("invalid_argument", message, std::move(context)) {}
};

/// Gradient descent produced a non-finite loss.
class DivergenceError : public Error {
 public:
  DivergenceError(const std::string& message, long iteration)
      : Error("divergence", message, "iteration " + std::to_string(iteration)),
        iteration_(iteration) {}
  long iteration() const noexcept { return iteration_; }

 private:
  long iteration_;
};

}  // namespace candlab
