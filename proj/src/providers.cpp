#include "sagekb/providers.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <thread>
#include <unordered_set>

#include <fmt/format.h>

#include "sagekb/html.hpp"
#include "sagekb/util.hpp"
#include "sagekb/vector_index.hpp"

namespace sagekb {

std::string_view to_string(Role role) {
  switch (role) {
    case Role::system: return "system";
    case Role::user: return "user";
    case Role::assistant: return "assistant";
  }
  return "user";
}

Role role_from_string(std::string_view s) {
  if (s == "system") return Role::system;
  if (s == "user") return Role::user;
  if (s == "assistant") return Role::assistant;
  throw Error(ErrorCode::invalid_argument, fmt::format("unknown role '{}'", s));
}

ChatRequest ChatRequest::single_turn(std::string user, std::string system) {
  ChatRequest req;
  if (!system.empty()) req.messages.push_back({Role::system, std::move(system)});
  req.messages.push_back({Role::user, std::move(user)});
  return req;
}

void validate(const ChatRequest& req) {
  if (req.messages.empty()) {
    throw Error(ErrorCode::invalid_argument, "chat request has no messages");
  }
  if (req.messages.back().role != Role::user) {
    throw Error(ErrorCode::invalid_argument, "last chat message must come from the user");
  }
  if (!(req.temperature >= 0.0 && req.temperature <= 2.0)) {
    throw Error(ErrorCode::invalid_argument, "temperature must be in [0, 2]");
  }
  if (req.max_tokens <= 0) {
    throw Error(ErrorCode::invalid_argument, "max_tokens must be positive");
  }
}

ChatResponse ChatProvider::complete(const ChatRequest& req) {
  validate(req);
  ChatResponse resp = do_complete(req);
  if (trim_view(resp.text).empty()) {
    throw Error(ErrorCode::provider_bad_response, "chat provider returned empty text");
  }
  return resp;
}

std::vector<Embedding> EmbeddingProvider::embed(const std::vector<std::string>& texts) {
  for (const auto& t : texts) {
    if (trim_view(t).empty()) {
      throw Error(ErrorCode::invalid_argument, "cannot embed empty text");
    }
  }
  if (texts.empty()) return {};
  std::vector<Embedding> out = do_embed(texts);
  if (out.size() != texts.size()) {
    throw Error(ErrorCode::provider_bad_response,
                fmt::format("embedding provider returned {} vectors for {} inputs",
                            out.size(), texts.size()));
  }
  const std::uint32_t dim = dimension();
  for (Embedding& v : out) {
    if (v.size() != dim) {
      throw Error(ErrorCode::dimension_mismatch,
                  fmt::format("embedding has dimension {}, expected {}", v.size(), dim));
    }
    const double norm = l2_norm(v);
    if (!(norm > 0.0) || !std::isfinite(norm)) {
      throw Error(ErrorCode::provider_bad_response, "embedding has zero or invalid norm");
    }
    if (std::abs(norm - 1.0) > kUnitNormTolerance) {
      for (float& x : v) x = static_cast<float>(static_cast<double>(x) / norm);
    }
  }
  return out;
}

Embedding EmbeddingProvider::embed_one(const std::string& text) {
  return std::move(embed({text}).front());
}

namespace {

void check_search_args(const std::string& query, int top_n) {
  if (trim_view(query).empty()) {
    throw Error(ErrorCode::invalid_argument, "search query is empty");
  }
  if (top_n < 1) {
    throw Error(ErrorCode::invalid_argument, "top_n must be >= 1");
  }
}

}  // namespace

std::vector<SearchHit> SearchProvider::search(const std::string& query, int top_n) {
  check_search_args(query, top_n);
  std::vector<SearchHit> raw = do_search(query, top_n);
  std::vector<SearchHit> hits;
  std::unordered_set<std::string> seen;
  for (auto& h : raw) {
    if (static_cast<int>(hits.size()) >= top_n) break;
    if (h.url.empty() || !seen.insert(h.url).second) continue;
    h.rank = static_cast<int>(hits.size()) + 1;
    hits.push_back(std::move(h));
  }
  return hits;
}

std::vector<ArxivEntry> ArxivProvider::search(const std::string& query, int top_n) {
  check_search_args(query, top_n);
  std::vector<ArxivEntry> raw = do_search(query, top_n);
  std::vector<ArxivEntry> out;
  std::unordered_set<std::string> seen;
  for (auto& e : raw) {
    if (static_cast<int>(out.size()) >= top_n) break;
    if (e.url.empty() || !seen.insert(e.url).second) continue;
    out.push_back(std::move(e));
  }
  return out;
}

void validate_absolute_url(std::string_view url) {
  const auto scheme_end = url.find("://");
  const bool ok_scheme = scheme_end != std::string_view::npos &&
                         (url.substr(0, scheme_end) == "http" ||
                          url.substr(0, scheme_end) == "https");
  if (!ok_scheme) {
    throw Error(ErrorCode::invalid_argument, fmt::format("not an absolute URL: '{}'", url));
  }
  const std::string_view rest = url.substr(scheme_end + 3);
  const std::string_view host = rest.substr(0, rest.find_first_of("/?#"));
  if (host.empty() || host.find(' ') != std::string_view::npos) {
    throw Error(ErrorCode::invalid_argument, fmt::format("URL has no host: '{}'", url));
  }
}

namespace {

bool is_textual(std::string_view content_type) {
  const std::string ct = to_lower(content_type);
  return ct.empty() || ct.starts_with("text/") || ct.find("html") != std::string::npos ||
         ct.find("xml") != std::string::npos || ct.find("json") != std::string::npos;
}

bool is_markup(std::string_view content_type, std::string_view body) {
  const std::string ct = to_lower(content_type);
  if (ct.find("html") != std::string::npos || ct.find("xml") != std::string::npos) return true;
  const std::string head = to_lower(body.substr(0, 512));
  return head.find("<html") != std::string::npos || head.find("<body") != std::string::npos ||
         head.find("<!doctype") != std::string::npos;
}

}  // namespace

FetchedPage Fetcher::fetch(const std::string& url) {
  validate_absolute_url(url);
  RawPage raw = do_fetch(url);
  if (raw.status != 200) {
    throw Error(ErrorCode::provider_http, fmt::format("GET {} returned HTTP {}", url, raw.status));
  }
  if (!is_textual(raw.content_type)) {
    throw Error(ErrorCode::provider_bad_response,
                fmt::format("GET {} returned non-text content type '{}'", url, raw.content_type));
  }
  FetchedPage page;
  page.url = url;
  page.text = is_markup(raw.content_type, raw.body) ? html_to_text(raw.body)
                                                    : collapse_whitespace(raw.body);
  page.raw_chars = page.text.size();
  if (page.text.size() > max_chars_) {
    page.text.resize(utf8_floor(page.text, max_chars_));
    page.text.append(kTruncationMarker);
    page.truncated = true;
  }
  return page;
}

std::string_view to_string(MediaType t) {
  return t == MediaType::audio ? "audio" : "video";
}

MediaType media_type_from_string(std::string_view s) {
  if (s == "audio") return MediaType::audio;
  if (s == "video") return MediaType::video;
  throw Error(ErrorCode::invalid_argument, fmt::format("unknown media type '{}'", s));
}

std::string Transcriber::transcribe(std::string_view media, MediaType type) {
  if (media.empty()) {
    throw Error(ErrorCode::invalid_argument, "media stream is empty");
  }
  std::string text = do_transcribe(media, type);
  if (trim_view(text).empty()) {
    throw Error(ErrorCode::provider_bad_response, "transcription is empty");
  }
  return text;
}

bool is_retryable(const Error& e) {
  return e.code() == ErrorCode::provider_transport || e.code() == ErrorCode::provider_timeout;
}

void sleep_for_backoff(const RetryPolicy& policy, int attempt) {
  if (policy.backoff_base.count() <= 0) return;
  const auto delay = policy.backoff_base * (1LL << std::min(attempt, 10));
  std::this_thread::sleep_for(delay);
}

RateLimiter::RateLimiter(double rate_per_sec, double burst)
    : rate_(rate_per_sec),
      burst_(std::max(1.0, burst)),
      tokens_(std::max(1.0, burst)),
      last_(std::chrono::steady_clock::now()) {}

void RateLimiter::acquire() {
  if (rate_ <= 0.0) return;
  std::unique_lock lock(mu_);
  for (;;) {
    const auto now = std::chrono::steady_clock::now();
    const double elapsed = std::chrono::duration<double>(now - last_).count();
    tokens_ = std::min(burst_, tokens_ + elapsed * rate_);
    last_ = now;
    if (tokens_ >= 1.0) {
      tokens_ -= 1.0;
      return;
    }
    const double wait = (1.0 - tokens_) / rate_;
    lock.unlock();
    std::this_thread::sleep_for(std::chrono::duration<double>(wait));
    lock.lock();
  }
}

ChatResponse RetryingChat::do_complete(const ChatRequest& req) {
  return call_with_retries(policy_, [&] { return inner_->complete(req); });
}

void ProviderConfig::validate() const {
  if (!(timeout_seconds > 0.0)) {
    throw Error(ErrorCode::invalid_argument, "provider timeout must be > 0");
  }
  if (retry.max_retries < 0) {
    throw Error(ErrorCode::invalid_argument, "provider retry count must be >= 0");
  }
}

std::string ProviderConfig::api_key() const {
  if (api_key_env.empty()) return {};
  const char* v = std::getenv(api_key_env.c_str());
  return v ? std::string(v) : std::string();
}

ChatProvider& ProviderSet::judge_or_chat() const {
  if (judge) return *judge;
  if (chat) return *chat;
  throw Error(ErrorCode::unsupported, "no chat provider configured");
}

Transcriber& ProviderSet::require_transcriber() const {
  if (!transcriber) {
    throw Error(ErrorCode::unsupported, "no transcription provider configured");
  }
  return *transcriber;
}

}  // namespace sagekb
