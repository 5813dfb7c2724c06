#pragma once

#include <stdexcept>
#include <string>

namespace omni {

// Base class for all library errors. `code` is a stable machine-readable
// identifier surfaced by the CLI in its JSON error payload.
class Error : public std::runtime_error {
 public:
  Error(std::string code, const std::string& message)
      : std::runtime_error(message), code_(std::move(code)) {}

  const std::string& code() const noexcept { return code_; }

 private:
  std::string code_;
};

class InvalidArgument : public Error {
 public:
  explicit InvalidArgument(const std::string& message)
      : Error("invalid_argument", message) {}
};

class ConfigError : public Error {
 public:
  ConfigError(const std::string& field, const std::string& constraint)
      : Error("config_error", field + ": " + constraint), field_(field) {}

  const std::string& field() const noexcept { return field_; }

 private:
  std::string field_;
};

class IoError : public Error {
 public:
  explicit IoError(const std::string& message) : Error("io_error", message) {}
};

}  // namespace omni
