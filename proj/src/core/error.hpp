#pragma once

#include <stdexcept>
#include <string>

namespace handover {

enum class ErrorCode {
  InvalidArgument,
  Config,
  Solver,
  State,
  Conflict,
  NotFound,
  DivergedRollout,
  Io,
};

const char* to_string(ErrorCode code) noexcept;

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

// Config errors carry the offending field path (e.g. "epsilon", "sim.dt").
class ConfigError : public Error {
 public:
  ConfigError(std::string field, const std::string& message)
      : Error(ErrorCode::Config, field + ": " + message), field_(std::move(field)) {}

  const std::string& field() const noexcept { return field_; }

 private:
  std::string field_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& message) {
  throw Error(code, message);
}

}  // namespace handover
