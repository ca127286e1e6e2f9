#pragma once

#include <stdexcept>
#include <string>

namespace fedmem {

// Base of every error the library raises.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Problems with user input or configuration. The CLI maps these to exit code 1.
class ValidationError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public ValidationError {
 public:
  explicit ConfigError(const std::string& what) : ValidationError("configuration error: " + what) {}
};

class InputError : public ValidationError {
 public:
  explicit InputError(const std::string& what) : ValidationError("input error: " + what) {}
};

class ParseError : public ValidationError {
 public:
  explicit ParseError(const std::string& what) : ValidationError("parse error: " + what) {}
};

class SemanticError : public ValidationError {
 public:
  explicit SemanticError(const std::string& what) : ValidationError("semantic error: " + what) {}
};

// Failures while work is running. Exit code 2.
class IoError : public Error {
 public:
  explicit IoError(const std::string& what) : Error("io error: " + what) {}
};

class NumericError : public Error {
 public:
  explicit NumericError(const std::string& what) : Error("numeric error: " + what) {}
};

class TrainingError : public Error {
 public:
  explicit TrainingError(const std::string& what) : Error("training error: " + what) {}
};

class PartitionError : public Error {
 public:
  explicit PartitionError(const std::string& what) : Error("partition error: " + what) {}
};

class AggregationError : public Error {
 public:
  explicit AggregationError(const std::string& what) : Error("aggregation error: " + what) {}
};

class InterpolationError : public Error {
 public:
  explicit InterpolationError(const std::string& what) : Error("interpolation error: " + what) {}
};

class ReportError : public Error {
 public:
  explicit ReportError(const std::string& what) : Error("report error: " + what) {}
};

}  // namespace fedmem
