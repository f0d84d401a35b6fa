#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace minority {

/// Base class of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid configuration value (schedule range, guidance settings, config keys).
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Argument outside the domain of an operation (timestep out of range, too few neighbors).
class DomainError : public Error {
 public:
  using Error::Error;
};

/// A computation would divide by a vanishing quantity or produced a non-finite value.
class NumericError : public Error {
 public:
  using Error::Error;
};

class TrainingDivergence : public NumericError {
 public:
  TrainingDivergence(std::size_t step, double loss)
      : NumericError("training diverged at step " + std::to_string(step) +
                     " (loss = " + std::to_string(loss) + ")"),
        step_(step) {}

  std::size_t step() const noexcept { return step_; }

 private:
  std::size_t step_;
};

/// Malformed or incompatible file (checkpoint magic, version, fingerprint, truncation).
class FormatError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace minority
