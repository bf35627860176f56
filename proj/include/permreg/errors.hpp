#pragma once

#include <stdexcept>
#include <string>

namespace permreg {

// Base class for every error raised by this library.  Callers that want a
// single catch site can catch permreg::Error; the derived types below exist
// so that tests and tools can react to specific failure modes.
struct Error : std::runtime_error {
  explicit Error(const std::string& what) : std::runtime_error(what) {}
};

struct RankDeficient : Error {
  using Error::Error;
};

struct LengthMismatch : Error {
  using Error::Error;
};

struct DimMismatch : Error {
  using Error::Error;
};

struct DomainError : Error {
  using Error::Error;
};

struct NonFinite : Error {
  using Error::Error;
};

struct InvalidPermutation : Error {
  using Error::Error;
};

struct InvalidDistance : Error {
  using Error::Error;
};

struct ClassTooLarge : Error {
  using Error::Error;
};

struct Overflow : Error {
  using Error::Error;
};

struct EmptySet : Error {
  using Error::Error;
};

struct EmptyRegion : Error {
  using Error::Error;
};

struct IdentifiabilityViolated : Error {
  using Error::Error;
};

struct InfeasibleWindow : Error {
  using Error::Error;
};

struct BudgetExceeded : Error {
  using Error::Error;
};

struct FileError : Error {
  using Error::Error;
};

struct SchemaError : Error {
  using Error::Error;
};

struct DegenerateColumn : Error {
  using Error::Error;
};

}  // namespace permreg
