#include "soda/error.hpp"

namespace soda {

std::string_view error_code_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::InvalidToken: return "INVALID_TOKEN";
    case ErrorCode::NumericalError: return "NUMERICAL_ERROR";
    case ErrorCode::InvalidConfig: return "INVALID_CONFIG";
    case ErrorCode::UnsupportedArchitecture: return "UNSUPPORTED_ARCHITECTURE";
    case ErrorCode::InvalidInput: return "INVALID_INPUT";
    case ErrorCode::StaleBase: return "STALE_BASE";
    case ErrorCode::Alignment: return "ALIGNMENT_ERROR";
    case ErrorCode::Budget: return "BUDGET_ERROR";
    case ErrorCode::DegenerateInput: return "DEGENERATE_INPUT";
    case ErrorCode::Migration: return "MIGRATION_ERROR";
    case ErrorCode::ConfigNotFound: return "CONFIG_NOT_FOUND";
    case ErrorCode::Io: return "IO_ERROR";
    case ErrorCode::Usage: return "USAGE_ERROR";
  }
  return "UNKNOWN";
}

}  // namespace soda
