#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace tcs {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class PreconditionError : public Error {
 public:
  using Error::Error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

class DecompositionError : public Error {
 public:
  DecompositionError(const std::string& what, std::size_t iterations)
      : Error(what + " (after " + std::to_string(iterations) + " sweeps)"), iterations_(iterations) {}
  std::size_t iterations() const noexcept { return iterations_; }

 private:
  std::size_t iterations_;
};

class SingularMatrixError : public Error {
 public:
  using Error::Error;
};

class DivergenceError : public Error {
 public:
  DivergenceError(const std::string& what, std::size_t epoch, std::size_t batch)
      : Error(what + " at epoch " + std::to_string(epoch) + ", batch " + std::to_string(batch)),
        epoch_(epoch),
        batch_(batch) {}
  std::size_t epoch() const noexcept { return epoch_; }
  std::size_t batch() const noexcept { return batch_; }

 private:
  std::size_t epoch_;
  std::size_t batch_;
};

class FormatError : public Error {
 public:
  using Error::Error;
};

class MagicMismatchError : public FormatError {
 public:
  using FormatError::FormatError;
};

class TruncatedError : public FormatError {
 public:
  using FormatError::FormatError;
};

class CountMismatchError : public FormatError {
 public:
  using FormatError::FormatError;
};

class VersionError : public FormatError {
 public:
  using FormatError::FormatError;
};

class InsufficientDataError : public Error {
 public:
  InsufficientDataError(const std::string& what, std::size_t label) : Error(what), label_(label) {}
  std::size_t label() const noexcept { return label_; }

 private:
  std::size_t label_;
};

class ScheduleError : public Error {
 public:
  using Error::Error;
};

class StateError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

}  // namespace tcs
