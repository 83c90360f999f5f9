#pragma once

#include <stdexcept>
#include <string>

namespace attriq {

// Every failure carries one of three categories; the CLI maps them to
// distinct exit codes (config=2, data=3, numerical=4).
class Error : public std::runtime_error {
 public:
  enum class Category { kConfig, kData, kNumerical };

  Error(Category category, const std::string& message)
      : std::runtime_error(message), category_(category) {}

  Category category() const noexcept { return category_; }

 private:
  Category category_;
};

class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& m) : Error(Category::kConfig, m) {}
};

// Shape mismatch between tensors/operands; message names both shapes.
class ShapeError : public ConfigError {
 public:
  explicit ShapeError(const std::string& m) : ConfigError(m) {}
};

// Tape misuse (backward without a recorded forward, double backward, ...).
class GraphStateError : public ConfigError {
 public:
  explicit GraphStateError(const std::string& m) : ConfigError(m) {}
};

class DataError : public Error {
 public:
  explicit DataError(const std::string& m) : Error(Category::kData, m) {}
};

class ParseError : public DataError {
 public:
  explicit ParseError(const std::string& m) : DataError(m) {}
};

class UnknownDistortion : public DataError {
 public:
  explicit UnknownDistortion(const std::string& m) : DataError(m) {}
};

class DuplicateDistortion : public DataError {
 public:
  explicit DuplicateDistortion(const std::string& m) : DataError(m) {}
};

// Metric input with no variance or too few points.
class DegenerateInput : public DataError {
 public:
  explicit DegenerateInput(const std::string& m) : DataError(m) {}
};

class NumericalError : public Error {
 public:
  explicit NumericalError(const std::string& m)
      : Error(Category::kNumerical, m) {}
};

// Non-finite value produced inside a distortion kernel.
class KernelNumericalError : public NumericalError {
 public:
  explicit KernelNumericalError(const std::string& m) : NumericalError(m) {}
};

// Violated runtime invariant (simplex weights off the simplex, ...).
class InvariantError : public NumericalError {
 public:
  explicit InvariantError(const std::string& m) : NumericalError(m) {}
};

}  // namespace attriq
