// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace nvk {

/// Base of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Operand shapes are incompatible.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// Caller broke a documented contract (non-scalar loss, length mismatch, ...).
class ContractError : public Error {
 public:
  using Error::Error;
};

/// Numeric precondition violated (non-positive temperature or step size, ...).
class PreconditionError : public Error {
 public:
  using Error::Error;
};

/// Invalid model, training or data configuration.
class ConfigError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

/// Archive is malformed or does not match the model it is loaded into.
class CheckpointError : public Error {
 public:
  using Error::Error;
};

class UnsupportedArchitecture : public Error {
 public:
  using Error::Error;
};

/// Raised when training has to stop because of non-finite values.
class NumericalAbort : public Error {
 public:
  using Error::Error;
};

/// Non-finite activation detected by a forward-pass guard.
class NonFiniteError : public Error {
 public:
  NonFiniteError(const std::string& where, int layer)
      : Error("non-finite values in " + where + " (layer " + std::to_string(layer) + ")"),
        layer_(layer) {}
  int layer() const { return layer_; }

 private:
  int layer_;
};

}  // namespace nvk
