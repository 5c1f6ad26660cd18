#pragma once

#include <stdexcept>
#include <string>

namespace fine {

// Base of every error the library throws. `kind()` is a stable short tag used
// by the CLI when it reports failures as JSON.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
  virtual const char* kind() const noexcept { return "error"; }
};

class DimensionError : public Error {
 public:
  using Error::Error;
  const char* kind() const noexcept override { return "dimension"; }
};

class InputError : public Error {
 public:
  using Error::Error;
  const char* kind() const noexcept override { return "input"; }
};

class ConfigError : public Error {
 public:
  using Error::Error;
  const char* kind() const noexcept override { return "config"; }
};

class UsageError : public Error {
 public:
  using Error::Error;
  const char* kind() const noexcept override { return "usage"; }
};

class NumericError : public Error {
 public:
  using Error::Error;
  const char* kind() const noexcept override { return "numeric"; }
};

class IoError : public Error {
 public:
  using Error::Error;
  const char* kind() const noexcept override { return "io"; }
};

class CorruptCheckpointError : public Error {
 public:
  using Error::Error;
  const char* kind() const noexcept override { return "corrupt_checkpoint"; }
};

class VersionMismatchError : public Error {
 public:
  using Error::Error;
  const char* kind() const noexcept override { return "version_mismatch"; }
};

class EditError : public Error {
 public:
  using Error::Error;
  const char* kind() const noexcept override { return "edit"; }
};

}  // namespace fine
