#pragma once

#include <stdexcept>
#include <string>

namespace headbench {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed or missing files.
class IoError : public Error {
 public:
  using Error::Error;
};

// Bad arguments or configuration; maps to CLI exit code 3.
class ValidationError : public Error {
 public:
  using Error::Error;
};

// Lookup of an id that does not exist.
class NotFoundError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

// A domain rule was violated (e.g. verdict category not allowed for the case origin).
class RuleViolation : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

class NumericError : public Error {
 public:
  NumericError(std::string parameter, const std::string& what)
      : Error("non-finite value in " + parameter + ": " + what), parameter_(std::move(parameter)) {}
  const std::string& parameter() const noexcept { return parameter_; }

 private:
  std::string parameter_;
};

}  // namespace headbench
