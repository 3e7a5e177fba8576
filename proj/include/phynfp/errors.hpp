#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace phynfp {

/// Base of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed input file or graph structure (duplicate edge, dangling node, bad header).
class SchemaError : public Error {
 public:
  using Error::Error;
};

/// A value is out of its admissible domain (non-finite feature, non-positive step, ...).
class ValueError : public Error {
 public:
  using Error::Error;
};

class IndexError : public Error {
 public:
  using Error::Error;
};

/// Tensor or operator dimensions do not agree.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// A caller broke an API contract (e.g. backward on a non-scalar).
class ContractError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Two artifacts that must share an evaluation protocol do not.
class ProtocolError : public Error {
 public:
  using Error::Error;
};

/// A simulation step produced non-finite values.
class InstabilityError : public Error {
 public:
  InstabilityError(const std::string& what, std::size_t step)
      : Error(what + " (step " + std::to_string(step) + ")"), step_(step) {}
  std::size_t step() const { return step_; }

 private:
  std::size_t step_;
};

/// Training produced a non-finite loss.
class TrainingDivergedError : public Error {
 public:
  explicit TrainingDivergedError(std::size_t epoch)
      : Error("training diverged: non-finite loss at epoch " + std::to_string(epoch)),
        epoch_(epoch) {}
  std::size_t epoch() const { return epoch_; }

 private:
  std::size_t epoch_;
};

}  // namespace phynfp
