#pragma once

#include <stdexcept>
#include <string>

namespace sprobe {

// Base for every error the toolkit throws on purpose.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed input files (JSON syntax, schema, unknown keys).
class ParseError : public Error {
 public:
  using Error::Error;
};

// Inputs that parse but break a documented invariant.
class ValidationError : public Error {
 public:
  using Error::Error;
};

// Bundle integrity: checksum, shape and missing-record failures.
class BundleError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

// Statistical procedures called on data they are undefined for
// (zero variance, all-zero differences, rank-deficient designs).
class DegenerateDataError : public Error {
 public:
  using Error::Error;
};

class ProbeError : public Error {
 public:
  using Error::Error;
};

// Bad command-line usage or unreadable paths; maps to exit code 2.
class UsageError : public Error {
 public:
  using Error::Error;
};

}  // namespace sprobe
