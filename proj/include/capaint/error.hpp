#pragma once

#include <stdexcept>
#include <string>

namespace capaint {

// Process exit codes used by the command-line front end.
enum class ExitCode : int {
  kOk = 0,
  kConfig = 2,
  kNumeric = 3,
  kIntegrity = 4,
};

class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& what) : std::runtime_error(what) {}
  virtual ExitCode exit_code() const noexcept { return ExitCode::kConfig; }
};

// Invalid or inconsistent configuration, detected before side effects.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// API misuse: unknown mode, empty input group, untrained model, ...
class UsageError : public Error {
 public:
  using Error::Error;
};

class IndexError : public Error {
 public:
  using Error::Error;
};

// Tensor shape disagreement. The message names the offending axis.
class DimensionError : public Error {
 public:
  using Error::Error;
  ExitCode exit_code() const noexcept override { return ExitCode::kIntegrity; }
};

// Files on disk disagree with their manifest or header.
class IntegrityError : public Error {
 public:
  using Error::Error;
  ExitCode exit_code() const noexcept override { return ExitCode::kIntegrity; }
};

// Non-finite values during integration, sampling or optimisation.
class NumericError : public Error {
 public:
  using Error::Error;
  ExitCode exit_code() const noexcept override { return ExitCode::kNumeric; }
};

class TrainingError : public NumericError {
 public:
  TrainingError(const std::string& what, int last_finite_epoch)
      : NumericError(what), last_finite_epoch_(last_finite_epoch) {}
  int last_finite_epoch() const noexcept { return last_finite_epoch_; }

 private:
  int last_finite_epoch_;
};

}  // namespace capaint
