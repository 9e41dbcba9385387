#pragma once

#include <stdexcept>
#include <string>

namespace spinfilter {

/// Invalid parameters or schema (CLI exit code 2).
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Config document violates the schema; `path()` is a JSON pointer.
class SchemaError : public ConfigError {
 public:
  SchemaError(const std::string& path, const std::string& what)
      : ConfigError((path.empty() ? std::string("/") : path) + ": " + what), path_(path) {}
  [[nodiscard]] const std::string& path() const { return path_; }

 private:
  std::string path_;
};

/// A structural hypothesis check failed on otherwise well-formed input.
class ValidationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Numeric breakdown during integration or filtering (CLI exit code 3).
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class StepError : public NumericError {
 public:
  StepError(const std::string& what, std::size_t step) : NumericError(what), step_(step) {}
  [[nodiscard]] std::size_t step() const { return step_; }

 private:
  std::size_t step_;
};

class FilterDivergence : public NumericError {
 public:
  using NumericError::NumericError;
};

}  // namespace spinfilter
