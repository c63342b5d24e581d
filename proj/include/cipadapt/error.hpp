#pragma once

#include <stdexcept>
#include <string>

namespace cipadapt {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// A configuration value or an argument violates a documented precondition.
class ValidationError : public Error {
public:
  using Error::Error;
};

/// A solver diverged, a factorization failed, or an iteration did not converge.
class NumericalError : public Error {
public:
  using Error::Error;
};

/// Data were generated on a mesh that is also used by the inversion.
class InverseCrimeError : public Error {
public:
  using Error::Error;
};

/// File could not be read, parsed, or written.
class IoError : public Error {
public:
  using Error::Error;
};

namespace detail {

inline void require(bool cond, const std::string& what) {
  if (!cond)
    throw ValidationError(what);
}

} // namespace detail
} // namespace cipadapt
