#pragma once

#include <stdexcept>
#include <string>

namespace flashattn {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Operand shapes do not agree.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// A block, head or element index is out of range.
class IndexError : public Error {
 public:
  using Error::Error;
};

/// An AttentionConfig, BlockSpec or scheduler/bench configuration is invalid.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// A caller-side precondition that is not a shape issue (missing forward
/// artifacts, empty logsumexp, ...).
class ContractError : public Error {
 public:
  using Error::Error;
};

/// Argument outside the mathematical domain of a cost formula.
class DomainError : public Error {
 public:
  using Error::Error;
};

/// A row had no unmasked column and the configured policy is to reject it.
class MaskedRowError : public Error {
 public:
  using Error::Error;
};

/// Every autotune candidate exceeded the SRAM-analog capacity.
class CapacityError : public Error {
 public:
  using Error::Error;
};

/// A benchmark method failed the correctness gate.
class ValidationError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

/// A work unit failed inside the worker pool.
class ExecutionError : public Error {
 public:
  using Error::Error;
};

}  // namespace flashattn
