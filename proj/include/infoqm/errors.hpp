#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace infoqm {

// Base of every library error. code() is the stable machine-readable name.
class Error : public std::runtime_error {
 public:
  Error(std::string code, const std::string& message)
      : std::runtime_error(message), code_(std::move(code)) {}
  const std::string& code() const noexcept { return code_; }

 private:
  std::string code_;
};

class InvalidArgument : public Error {
 public:
  explicit InvalidArgument(const std::string& message) : Error("InvalidArgument", message) {}
};

class NonFiniteValue : public Error {
 public:
  NonFiniteValue(std::size_t site, const std::string& message)
      : Error("NonFiniteValue", message), site_(site) {}
  std::size_t site() const noexcept { return site_; }

 private:
  std::size_t site_;
};

class NodeDetected : public Error {
 public:
  NodeDetected(std::size_t site, const std::string& message)
      : Error("NodeDetected", message), site_(site) {}
  std::size_t site() const noexcept { return site_; }

 private:
  std::size_t site_;
};

class IncommensurateBoost : public Error {
 public:
  explicit IncommensurateBoost(const std::string& message) : Error("IncommensurateBoost", message) {}
};

class NonPositiveEffectiveMass : public Error {
 public:
  explicit NonPositiveEffectiveMass(const std::string& message)
      : Error("NonPositiveEffectiveMass", message) {}
};

class ParseError : public Error {
 public:
  ParseError(std::size_t line, std::size_t column, const std::string& message)
      : Error("ParseError", "line " + std::to_string(line) + ", column " + std::to_string(column) +
                                ": " + message),
        line_(line),
        column_(column) {}
  std::size_t line() const noexcept { return line_; }
  std::size_t column() const noexcept { return column_; }

 private:
  std::size_t line_;
  std::size_t column_;
};

class ConvergenceError : public Error {
 public:
  explicit ConvergenceError(const std::string& message) : Error("ConvergenceError", message) {}
};

class MethodUnavailable : public Error {
 public:
  explicit MethodUnavailable(const std::string& message) : Error("MethodUnavailable", message) {}
};

class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& message) : Error("ConfigError", message) {}
};

}  // namespace infoqm
