#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace malkit {

// Shape mismatch between operands of a tensor op.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Categorical id outside its vocabulary.
class IndexError : public std::out_of_range {
 public:
  using std::out_of_range::out_of_range;
};

// Caller violated an operation precondition.
class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

// Nonfinite value produced or consumed during training.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class SpecError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Batch does not match the feature schema the model was built with.
class FeatureError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class ParseError : public std::runtime_error {
 public:
  ParseError(std::size_t line, std::string column, const std::string& what)
      : std::runtime_error("line " + std::to_string(line) + ", column '" +
                           column + "': " + what),
        line_(line),
        column_(std::move(column)) {}

  std::size_t line() const noexcept { return line_; }
  const std::string& column() const noexcept { return column_; }

 private:
  std::size_t line_;
  std::string column_;
};

// AUC-type metric evaluated on input that lacks one of the classes.
class MetricUndefined : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

class GenerationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

}  // namespace malkit
