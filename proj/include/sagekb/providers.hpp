#pragma once

#include <chrono>
#include <cstdint>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "sagekb/error.hpp"
#include "sagekb/model.hpp"

namespace sagekb {

// ---------------------------------------------------------------------------
// Chat completion
// ---------------------------------------------------------------------------

enum class Role { system, user, assistant };

std::string_view to_string(Role role);
Role role_from_string(std::string_view s);

struct ChatMessage {
  Role role = Role::user;
  std::string content;
};

struct ChatRequest {
  std::vector<ChatMessage> messages;
  double temperature = 0.0;
  int max_tokens = 1024;
  std::string model_id;

  /// Convenience: optional system prompt plus one user turn.
  static ChatRequest single_turn(std::string user, std::string system = {});
};

/// Throws invalid_argument when the request breaks its invariants.
void validate(const ChatRequest& req);

struct TokenUsage {
  int prompt_tokens = 0;
  int completion_tokens = 0;
};

struct ChatResponse {
  std::string text;
  TokenUsage usage;
};

/// Chat completion client. complete() checks the request and the response;
/// implementations only supply do_complete().
class ChatProvider {
 public:
  virtual ~ChatProvider() = default;
  ChatResponse complete(const ChatRequest& req);

 protected:
  virtual ChatResponse do_complete(const ChatRequest& req) = 0;
};

// ---------------------------------------------------------------------------
// Embeddings
// ---------------------------------------------------------------------------

class EmbeddingProvider {
 public:
  virtual ~EmbeddingProvider() = default;

  /// One unit-norm vector of dimension() per input text.
  std::vector<Embedding> embed(const std::vector<std::string>& texts);
  Embedding embed_one(const std::string& text);

  virtual std::uint32_t dimension() const = 0;

 protected:
  virtual std::vector<Embedding> do_embed(const std::vector<std::string>& texts) = 0;
};

// ---------------------------------------------------------------------------
// Web and arXiv search
// ---------------------------------------------------------------------------

struct SearchHit {
  std::string url;
  std::string title;
  std::string snippet;
  int rank = 0;  // 1-based, contiguous within a result set
};

class SearchProvider {
 public:
  virtual ~SearchProvider() = default;
  /// At most top_n hits, urls unique, ranks renumbered 1..n.
  std::vector<SearchHit> search(const std::string& query, int top_n);

 protected:
  virtual std::vector<SearchHit> do_search(const std::string& query, int top_n) = 0;
};

struct ArxivEntry {
  std::string id;
  std::string title;
  std::string abstract;
  std::string url;  // landing page
};

class ArxivProvider {
 public:
  virtual ~ArxivProvider() = default;
  std::vector<ArxivEntry> search(const std::string& query, int top_n);

 protected:
  virtual std::vector<ArxivEntry> do_search(const std::string& query, int top_n) = 0;
};

// ---------------------------------------------------------------------------
// Page fetching
// ---------------------------------------------------------------------------

inline constexpr std::size_t kDefaultMaxPageChars = 20000;
inline constexpr std::string_view kTruncationMarker = " [truncated]";

struct RawPage {
  int status = 0;
  std::string content_type;
  std::string body;
};

struct FetchedPage {
  std::string url;
  std::string text;
  std::size_t raw_chars = 0;
  bool truncated = false;
};

/// Validates an absolute http(s) URL; throws invalid_argument otherwise.
void validate_absolute_url(std::string_view url);

class Fetcher {
 public:
  explicit Fetcher(std::size_t max_chars = kDefaultMaxPageChars) : max_chars_(max_chars) {}
  virtual ~Fetcher() = default;

  /// Fetches and cleans a page: markup stripped, whitespace collapsed, and
  /// the text capped at max_chars() with a truncation marker appended.
  FetchedPage fetch(const std::string& url);

  std::size_t max_chars() const { return max_chars_; }

 protected:
  virtual RawPage do_fetch(const std::string& url) = 0;

 private:
  std::size_t max_chars_;
};

// ---------------------------------------------------------------------------
// Transcription
// ---------------------------------------------------------------------------

enum class MediaType { audio, video };

std::string_view to_string(MediaType t);
MediaType media_type_from_string(std::string_view s);

class Transcriber {
 public:
  virtual ~Transcriber() = default;
  std::string transcribe(std::string_view media, MediaType type);

 protected:
  virtual std::string do_transcribe(std::string_view media, MediaType type) = 0;
};

// ---------------------------------------------------------------------------
// Retry and rate limiting
// ---------------------------------------------------------------------------

struct RetryPolicy {
  int max_retries = 2;
  std::chrono::milliseconds backoff_base{200};
};

/// True for failures worth another attempt (transport and timeouts).
bool is_retryable(const Error& e);

void sleep_for_backoff(const RetryPolicy& policy, int attempt);

/// Runs fn, retrying retryable failures up to policy.max_retries times with
/// exponential backoff (base * 2^attempt).
template <typename F>
auto call_with_retries(const RetryPolicy& policy, F&& fn) -> decltype(fn()) {
  for (int attempt = 0;; ++attempt) {
    try {
      return fn();
    } catch (const Error& e) {
      if (!is_retryable(e) || attempt >= policy.max_retries) throw;
    }
    sleep_for_backoff(policy, attempt);
  }
}

/// Token bucket shared by all callers of one provider.
class RateLimiter {
 public:
  /// rate_per_sec <= 0 disables limiting.
  RateLimiter(double rate_per_sec, double burst);
  void acquire();

 private:
  double rate_;
  double burst_;
  double tokens_;
  std::chrono::steady_clock::time_point last_;
  std::mutex mu_;
};

/// Decorator applying a retry policy to another chat provider.
class RetryingChat : public ChatProvider {
 public:
  RetryingChat(std::shared_ptr<ChatProvider> inner, RetryPolicy policy)
      : inner_(std::move(inner)), policy_(policy) {}

 protected:
  ChatResponse do_complete(const ChatRequest& req) override;

 private:
  std::shared_ptr<ChatProvider> inner_;
  RetryPolicy policy_;
};

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

struct ProviderConfig {
  std::string endpoint;
  std::string api_key_env;  // name of the environment variable holding the key
  std::string model;
  double timeout_seconds = 60.0;
  RetryPolicy retry;
  std::uint32_t embedding_dimension = 0;
  double rate_limit_per_sec = 0.0;

  /// Throws invalid_argument when timeout <= 0 or retries < 0.
  void validate() const;
  std::string api_key() const;
};

/// The full set of providers an engine uses. transcriber may be null.
struct ProviderSet {
  std::shared_ptr<ChatProvider> chat;
  std::shared_ptr<ChatProvider> judge;  // falls back to chat when null
  std::shared_ptr<EmbeddingProvider> embedder;
  std::shared_ptr<SearchProvider> web_search;
  std::shared_ptr<ArxivProvider> arxiv;
  std::shared_ptr<Fetcher> fetcher;
  std::shared_ptr<Transcriber> transcriber;

  ChatProvider& judge_or_chat() const;
  Transcriber& require_transcriber() const;
};

/// Builds live providers from a JSON config file.
ProviderSet load_provider_config(const std::string& path);

/// Builds deterministic providers from fixture files in `fixtures_dir`.
ProviderSet load_mock_providers(const std::string& fixtures_dir,
                                std::uint32_t embedding_dimension = 64);

}  // namespace sagekb
