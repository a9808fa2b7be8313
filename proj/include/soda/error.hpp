#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace soda {

enum class ErrorCode {
  InvalidToken,
  NumericalError,
  InvalidConfig,
  UnsupportedArchitecture,
  InvalidInput,
  StaleBase,
  Alignment,
  Budget,
  DegenerateInput,
  Migration,
  ConfigNotFound,
  Io,
  Usage,
};

/// Stable, machine-readable name (e.g. "CONFIG_NOT_FOUND") used in CLI error JSON.
std::string_view error_code_name(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& message) {
  throw Error(code, message);
}

}  // namespace soda
