#pragma once

#include <stdexcept>
#include <string>

namespace icon {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Violated precondition: bad shapes, invalid dimensions, missing data.
class ContractError : public Error {
 public:
  using Error::Error;
};

// A computation left the domain where it is defined (NaN/Inf output, zero variance).
class NumericDomainError : public Error {
 public:
  using Error::Error;
};

// Coupling log-scales grew past the representable range.
class InstabilityError : public NumericDomainError {
 public:
  using NumericDomainError::NumericDomainError;
};

// Training produced a non-finite loss or gradient.
class DivergenceError : public Error {
 public:
  using Error::Error;
};

// Malformed dataset or manifest on disk.
class IngestionError : public Error {
 public:
  using Error::Error;
};

// Synthetic generator could not satisfy its own constraints.
class GenerationError : public Error {
 public:
  using Error::Error;
};

#define ICON_REQUIRE(cond, msg)                  \
  do {                                           \
    if (!(cond)) throw ::icon::ContractError(msg); \
  } while (0)

}  // namespace icon
