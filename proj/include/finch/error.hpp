#pragma once

#include <stdexcept>
#include <string>

namespace finch {

// Root of every error the library throws. Callers that only need to report
// a failure can catch this; the subclasses exist so tests and the CLI can
// tell error classes apart.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class InvalidInput : public Error {
 public:
  using Error::Error;
};

class DimensionError : public Error {
 public:
  using Error::Error;
};

class NumericError : public Error {
 public:
  using Error::Error;
};

// A caller broke an API contract (e.g. handed a cache from a different
// forward pass to a backward pass).
class ContractViolation : public Error {
 public:
  using Error::Error;
};

}  // namespace finch
