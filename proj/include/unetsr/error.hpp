#pragma once

#include <stdexcept>
#include <string>

namespace unetsr {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Tensor extents disagree with what an operation needs.
class DimensionError : public Error {
 public:
  DimensionError(std::string op, std::string axis, const std::string& detail)
      : Error(op + ": dimension mismatch on axis '" + axis + "': " + detail),
        op_(std::move(op)),
        axis_(std::move(axis)) {}

  const std::string& op() const noexcept { return op_; }
  const std::string& axis() const noexcept { return axis_; }

 private:
  std::string op_;
  std::string axis_;
};

/// A caller broke a documented precondition (non-scalar loss, image smaller
/// than a window, zero target extent, ...).
class ContractError : public Error {
 public:
  using Error::Error;
};

/// Invalid network, loss, training or run configuration.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Checkpoint or manifest bytes that cannot be parsed.
class CorruptFileError : public Error {
 public:
  using Error::Error;
};

/// File system or codec failure; the message carries the path.
class IoError : public Error {
 public:
  using Error::Error;
};

/// Non-finite values encountered while training.
class NumericError : public Error {
 public:
  using Error::Error;
};

}  // namespace unetsr
