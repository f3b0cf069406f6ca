#pragma once

#include <stdexcept>
#include <string>

namespace agggp {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed or inconsistent input: bad dimensions, invalid files, bad flags.
class InputError : public Error {
 public:
  using Error::Error;
};

/// A model parameter outside its admissible range (e.g. non-positive noise).
class ParameterError : public InputError {
 public:
  using InputError::InputError;
};

/// Factorization failure, non-finite objective or gradient, negative variance.
class NumericalError : public Error {
 public:
  using Error::Error;
};

/// A computation that would exceed a configured size or memory budget.
class ResourceError : public Error {
 public:
  using Error::Error;
};

}  // namespace agggp
