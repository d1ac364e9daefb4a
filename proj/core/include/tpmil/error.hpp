#pragma once

#include <stdexcept>
#include <string>

namespace tpmil {

/// Base for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Caller supplied something malformed: bad arguments, bad files, missing inputs.
class InvalidInput : public Error {
 public:
  using Error::Error;
};

/// Training or evaluation produced a NaN/Inf.
class NonFiniteError : public Error {
 public:
  using Error::Error;
};

}  // namespace tpmil
