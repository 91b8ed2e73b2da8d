#pragma once

#include <stdexcept>
#include <string>

namespace loco {

/// Tensor extents that do not agree with each other.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A value outside its admissible range (labels >= K, fractions > 1, ...).
class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// NaN/Inf detected inside a network layer or loss component.
class NumericFault : public std::runtime_error {
 public:
  NumericFault(const std::string& where, const std::string& what)
      : std::runtime_error(where + ": " + what), where_(where) {}
  const std::string& where() const noexcept { return where_; }

 private:
  std::string where_;
};

/// Dataset generation or ingestion failure.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Threshold state that cannot produce per-class thresholds.
class DegenerateState : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Two models whose parameter layouts differ.
class StructuralError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace loco
