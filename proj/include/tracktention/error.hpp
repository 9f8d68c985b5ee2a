#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>

namespace tracktention {

/// Base class of every error raised by the library. The CLI maps these to
/// exit code 2 (data error).
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Tensor extents do not agree with what an operation requires.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// NaN (or otherwise unusable non-finite) values reached a kernel.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Invalid hyperparameters or configuration.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Malformed serialized input. Carries the byte offset where decoding
/// failed when one is known.
class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::optional<std::uint64_t> offset = std::nullopt)
      : Error(offset ? what + " (at byte " + std::to_string(*offset) + ")" : what),
        offset_(offset) {}

  std::optional<std::uint64_t> offset() const noexcept { return offset_; }

 private:
  std::optional<std::uint64_t> offset_;
};

/// Synthetic track generation failed (e.g. a non-invertible motion map).
class GenerationError : public Error {
 public:
  using Error::Error;
};

/// A size guard tripped before allocating a quadratic workspace.
class ResourceError : public Error {
 public:
  using Error::Error;
};

/// Evaluation metrics could not be computed (e.g. empty mask).
class EvalError : public Error {
 public:
  using Error::Error;
};

/// Least-squares alignment is undefined because the prediction has zero variance.
class DegenerateFitError : public EvalError {
 public:
  using EvalError::EvalError;
};

}  // namespace tracktention
