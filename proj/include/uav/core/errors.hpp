#pragma once

#include <stdexcept>
#include <string>

namespace uav {

/// Root of every error raised by the library. The CLI maps subclasses onto
/// exit codes, so new error types should derive from the closest category.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Caller handed in something malformed.
class ValidationError : public Error {
 public:
  using Error::Error;
};

class ShapeError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

class ConfigError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

class IndexError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

class SequenceLengthError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

class NonFiniteError : public Error {
 public:
  using Error::Error;
};

class DeterminismError : public Error {
 public:
  using Error::Error;
};

class StateError : public Error {
 public:
  using Error::Error;
};

// A gradient reached, or an update touched, a parameter that must stay frozen.
class FreezeViolation : public Error {
 public:
  using Error::Error;
};

class ProvenanceError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

class SynthesisError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

class SplitError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

class AggregationError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

class ProviderError : public Error {
 public:
  using Error::Error;
};

// Stored bytes failed a structural or checksum test.
class IntegrityError : public Error {
 public:
  enum class Kind { bad_magic, unknown_version, truncated, checksum, io };

  IntegrityError(Kind kind, const std::string& what) : Error(what), kind_(kind) {}
  [[nodiscard]] Kind kind() const noexcept { return kind_; }

 private:
  Kind kind_;
};

}  // namespace uav
