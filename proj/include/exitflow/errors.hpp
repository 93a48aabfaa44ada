#pragma once

#include <stdexcept>
#include <string>

namespace exitflow {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Inconsistent or missing configuration (CFL violations, absent derivative
/// capability, malformed scenario files).
class ConfigurationError : public Error {
 public:
  using Error::Error;
};

/// Arguments outside the admissible set (s > t, starts outside the domain).
class DomainError : public Error {
 public:
  using Error::Error;
};

/// Boundary is not C1 at the queried point.
class GeometryError : public Error {
 public:
  using Error::Error;
};

/// The ODE integrator could not make progress.
class IntegrationError : public Error {
 public:
  using Error::Error;
};

/// Scalar data could not be evaluated where it was needed.
class DataError : public Error {
 public:
  using Error::Error;
};

/// Grid metadata mismatch between combined grid functions.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Invalid operator or sweep parameters.
class ParameterError : public Error {
 public:
  using Error::Error;
};

}  // namespace exitflow
