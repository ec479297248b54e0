#pragma once

#include <stdexcept>
#include <string>

namespace lsdf {

// Base of every error thrown by the library. Validation errors map to CLI
// exit code 2, everything else to 3.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ValidationError : public Error {
 public:
  using Error::Error;
};

class FormatError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

class OutOfBounds : public Error {
 public:
  using Error::Error;
};

class LimitViolation : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

class NonWatertight : public Error {
 public:
  using Error::Error;
};

class NoOverlap : public Error {
 public:
  using Error::Error;
};

class NotConverged : public Error {
 public:
  NotConverged(const std::string& what, double achieved_max_error)
      : Error(what), achieved_max_error_(achieved_max_error) {}
  double achieved_max_error() const noexcept { return achieved_max_error_; }

 private:
  double achieved_max_error_;
};

class DimensionMismatch : public Error {
 public:
  using Error::Error;
};

class GridMismatch : public Error {
 public:
  using Error::Error;
};

}  // namespace lsdf
