#pragma once

#include <stdexcept>
#include <string>

namespace gjscc {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Input for which an operation is undefined (e.g. normalizing a zero vector).
class DegenerateInputError : public Error {
 public:
  using Error::Error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Requested channel bandwidth ratio cannot be realized.
class InvalidRateError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

/// A file or dataset could not be read.
class IngestError : public Error {
 public:
  using Error::Error;
};

class NumericalError : public Error {
 public:
  using Error::Error;
};

/// Training phase started out of order.
class PhaseError : public Error {
 public:
  using Error::Error;
};

/// Even the coarsest codec setting exceeds the bit budget.
class BudgetInfeasibleError : public Error {
 public:
  using Error::Error;
};

class ConflictError : public Error {
 public:
  using Error::Error;
};

class NotFoundError : public Error {
 public:
  using Error::Error;
};

class EmptyReportError : public Error {
 public:
  using Error::Error;
};

class ProcessError : public Error {
 public:
  using Error::Error;
};

}  // namespace gjscc
