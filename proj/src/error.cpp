#include "sagekb/error.hpp"

namespace sagekb {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::invalid_argument: return "invalid_argument";
    case ErrorCode::kb_not_found: return "kb_not_found";
    case ErrorCode::not_found: return "not_found";
    case ErrorCode::already_exists: return "already_exists";
    case ErrorCode::corrupted_store: return "corrupted_store";
    case ErrorCode::storage: return "storage";
    case ErrorCode::unsupported_format: return "unsupported_format";
    case ErrorCode::undecodable: return "undecodable";
    case ErrorCode::empty_extraction: return "empty_extraction";
    case ErrorCode::dimension_mismatch: return "dimension_mismatch";
    case ErrorCode::dangling_provenance: return "dangling_provenance";
    case ErrorCode::provider_transport: return "provider_transport";
    case ErrorCode::provider_timeout: return "provider_timeout";
    case ErrorCode::provider_refusal: return "provider_refusal";
    case ErrorCode::provider_http: return "provider_http";
    case ErrorCode::provider_bad_response: return "provider_bad_response";
    case ErrorCode::parse_failure: return "parse_failure";
    case ErrorCode::out_of_range: return "out_of_range";
    case ErrorCode::zero_statements: return "zero_statements";
    case ErrorCode::zero_concepts: return "zero_concepts";
    case ErrorCode::unset_verdict: return "unset_verdict";
    case ErrorCode::unsupported: return "unsupported";
    case ErrorCode::sources_unavailable: return "sources_unavailable";
    case ErrorCode::internal: return "internal";
  }
  return "internal";
}

std::optional<ErrorCode> error_code_from_string(std::string_view name) {
  for (int i = 0; i <= static_cast<int>(ErrorCode::internal); ++i) {
    const auto code = static_cast<ErrorCode>(i);
    if (to_string(code) == name) return code;
  }
  return std::nullopt;
}

std::string_view api_code(ErrorCode code) {
  switch (code) {
    case ErrorCode::invalid_argument:
    case ErrorCode::unsupported_format:
    case ErrorCode::undecodable:
    case ErrorCode::empty_extraction:
    case ErrorCode::dimension_mismatch:
    case ErrorCode::dangling_provenance:
      return "invalid_request";
    case ErrorCode::kb_not_found: return "kb_not_found";
    case ErrorCode::not_found: return "not_found";
    case ErrorCode::already_exists: return "conflict";
    case ErrorCode::corrupted_store: return "corrupted_store";
    case ErrorCode::storage: return "storage_error";
    case ErrorCode::provider_transport:
    case ErrorCode::provider_http:
      return "provider_unavailable";
    case ErrorCode::provider_timeout: return "provider_timeout";
    case ErrorCode::provider_refusal: return "provider_refusal";
    case ErrorCode::provider_bad_response:
    case ErrorCode::parse_failure:
    case ErrorCode::out_of_range:
    case ErrorCode::zero_statements:
    case ErrorCode::zero_concepts:
      return "provider_bad_response";
    case ErrorCode::sources_unavailable: return "sources_unavailable";
    case ErrorCode::unsupported: return "unsupported";
    case ErrorCode::unset_verdict:
    case ErrorCode::internal:
      return "internal";
  }
  return "internal";
}

int http_status(std::string_view code) {
  if (code == "invalid_request") return 422;
  if (code == "kb_not_found" || code == "not_found") return 404;
  if (code == "conflict") return 409;
  if (code == "provider_unavailable" || code == "provider_refusal" ||
      code == "provider_bad_response" || code == "sources_unavailable")
    return 502;
  if (code == "provider_timeout") return 504;
  if (code == "unsupported") return 501;
  return 500;
}

}  // namespace sagekb
