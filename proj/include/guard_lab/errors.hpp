#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace guard_lab {

// Base of every error thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DimensionError : public Error {
 public:
  using Error::Error;
};

// Violated precondition on otherwise well-typed input.
class ContractError : public Error {
 public:
  using Error::Error;
};

class NumericError : public Error {
 public:
  using Error::Error;
};

class SingularityError : public NumericError {
 public:
  SingularityError(const std::string& what, std::size_t pivot)
      : NumericError(what), pivot_(pivot) {}
  std::size_t pivot() const { return pivot_; }

 private:
  std::size_t pivot_;
};

class TrainingError : public NumericError {
 public:
  TrainingError(const std::string& what, int epoch)
      : NumericError(what), epoch_(epoch) {}
  int epoch() const { return epoch_; }

 private:
  int epoch_;
};

// A ratio or normalization whose denominator vanished.
class DegenerateError : public NumericError {
 public:
  using NumericError::NumericError;
};

// Instance outside the regime the first-order theory covers.
class AssumptionError : public Error {
 public:
  using Error::Error;
};

}  // namespace guard_lab
