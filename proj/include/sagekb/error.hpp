#pragma once

#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>

namespace sagekb {

/// Internal error taxonomy. Each code maps onto one published API code
/// (see api_code()) so callers can branch on the fine-grained kind while
/// the HTTP surface stays a closed set.
enum class ErrorCode {
  invalid_argument,
  kb_not_found,
  not_found,
  already_exists,
  corrupted_store,
  storage,
  unsupported_format,
  undecodable,
  empty_extraction,
  dimension_mismatch,
  dangling_provenance,
  provider_transport,
  provider_timeout,
  provider_refusal,
  provider_http,
  provider_bad_response,
  parse_failure,
  out_of_range,
  zero_statements,
  zero_concepts,
  unset_verdict,
  unsupported,
  sources_unavailable,
  internal,
};

std::string_view to_string(ErrorCode code);
/// Inverse of to_string(); nullopt for unknown names.
std::optional<ErrorCode> error_code_from_string(std::string_view name);

/// Published wire code (ApiError.code) for an internal error.
std::string_view api_code(ErrorCode code);

/// HTTP status for a published wire code.
int http_status(std::string_view api_code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message,
        std::optional<std::string> stage = std::nullopt)
      : std::runtime_error(message), code_(code), stage_(std::move(stage)) {}

  ErrorCode code() const noexcept { return code_; }
  const std::optional<std::string>& stage() const noexcept { return stage_; }

  /// Returns a copy tagged with a pipeline stage unless one is already set.
  Error with_stage(std::string stage) const {
    return Error(code_, what(), stage_ ? stage_ : std::optional(std::move(stage)));
  }

  bool is_provider_error() const noexcept {
    switch (code_) {
      case ErrorCode::provider_transport:
      case ErrorCode::provider_timeout:
      case ErrorCode::provider_refusal:
      case ErrorCode::provider_http:
      case ErrorCode::provider_bad_response:
        return true;
      default:
        return false;
    }
  }

 private:
  ErrorCode code_;
  std::optional<std::string> stage_;
};

}  // namespace sagekb
