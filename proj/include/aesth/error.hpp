#pragma once

#include <stdexcept>
#include <string>

namespace aesth {

/// Root of every error thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Incompatible tensor or vector extents.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// NaN/Inf where a finite value is required.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// API called out of order, e.g. backward without a forward context.
class UsageError : public Error {
 public:
  using Error::Error;
};

class RangeError : public Error {
 public:
  using Error::Error;
};

/// A region that maps to an empty feature rectangle.
class DegenerateRegionError : public Error {
 public:
  using Error::Error;
};

/// Image does not fit the canvas, or a transform produced the wrong size.
class SizeError : public Error {
 public:
  using Error::Error;
};

class EmptyHistogramError : public Error {
 public:
  using Error::Error;
};

/// Correlation of a constant sequence.
class UndefinedCorrelationError : public Error {
 public:
  using Error::Error;
};

class ParseError : public Error {
 public:
  using Error::Error;
};

class SchemaError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

/// Checkpoint config does not match the requested configuration.
class ConfigMismatchError : public Error {
 public:
  using Error::Error;
};

}  // namespace aesth
