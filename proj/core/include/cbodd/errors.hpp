#pragma once

#include <stdexcept>
#include <string>

namespace cbodd {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Shape or extent mismatch between operands.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// Operation requires a different rank (e.g. backward on a non-scalar).
class RankError : public Error {
 public:
  using Error::Error;
};

/// Non-finite values where finite ones are required.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Optimizer or model state is inconsistent with the requested operation.
class StateError : public Error {
 public:
  using Error::Error;
};

/// Invalid configuration value or combination.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Empty or inconsistent batch.
class BatchError : public Error {
 public:
  using Error::Error;
};

/// A required branch is missing from a fusion input.
class CompletenessError : public Error {
 public:
  using Error::Error;
};

/// Label outside {0, 1}.
class LabelError : public Error {
 public:
  using Error::Error;
};

/// Empty or otherwise unusable input sequence.
class InputError : public Error {
 public:
  using Error::Error;
};

/// Metric undefined for the given input (e.g. single-class AUC).
class MetricError : public Error {
 public:
  using Error::Error;
};

/// Train and test sets share clip ids.
class LeakageError : public Error {
 public:
  using Error::Error;
};

/// Corrupt or unreadable corpus / checkpoint bytes.
class DataError : public Error {
 public:
  using Error::Error;
};

/// Artifact (checkpoint, report) does not belong to the active config.
class ArtifactMismatchError : public Error {
 public:
  using Error::Error;
};

}  // namespace cbodd
