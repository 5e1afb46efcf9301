#pragma once

#include <stdexcept>
#include <string>

namespace mapr {

// Process exit codes used by the command-line tool.
enum class ExitCode : int {
  kSuccess = 0,
  kConfigError = 2,
  kDataError = 3,
  kDivergence = 4,
};

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
  virtual ExitCode exit_code() const noexcept { return ExitCode::kConfigError; }
};

// Invalid configuration or precondition violation on user-supplied settings.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Malformed or unreadable input data.
class DataError : public Error {
 public:
  using Error::Error;
  ExitCode exit_code() const noexcept override { return ExitCode::kDataError; }
};

// Loss or activations became non-finite during training.
class DivergenceError : public Error {
 public:
  using Error::Error;
  ExitCode exit_code() const noexcept override { return ExitCode::kDivergence; }
};

// Incompatible tensor shapes or a numerically invalid tensor operation.
class ShapeError : public Error {
 public:
  using Error::Error;
};

}  // namespace mapr
