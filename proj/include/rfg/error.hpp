#pragma once

#include <stdexcept>
#include <string>

namespace rfg {

/// Base of every library exception. Subclasses map onto CLI exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Shape or rank mismatch between operands.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// Input outside the mathematical domain of an operation (NaN, empty set, t out of range...).
class DomainError : public Error {
 public:
  using Error::Error;
};

/// Invalid calibration or kernel configuration.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Malformed scenario / motions file. The message starts with the offending field path.
class SchemaError : public Error {
 public:
  SchemaError(const std::string& path, const std::string& what)
      : Error(path + ": " + what), path_(path) {}
  const std::string& path() const noexcept { return path_; }

 private:
  std::string path_;
};

class SynthesisError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

/// Training loop produced a non-finite value.
class TrainingError : public Error {
 public:
  TrainingError(std::size_t step, const std::string& what)
      : Error("step " + std::to_string(step) + ": " + what), step_(step) {}
  std::size_t step() const noexcept { return step_; }

 private:
  std::size_t step_;
};

}  // namespace rfg
