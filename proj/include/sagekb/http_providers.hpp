#pragma once

// Live provider adapters. Chat, embeddings and transcription speak the
// OpenAI-compatible HTTP schema so hosted and self-hosted models share one
// adapter; web search scrapes the DuckDuckGo HTML endpoint and arXiv search
// uses the public Atom API.

#include <memory>
#include <string>

#include "sagekb/providers.hpp"

namespace sagekb {

struct SplitUrl {
  std::string origin;  // scheme://host[:port]
  std::string path;    // begins with '/', may be "/"
};

SplitUrl split_url(const std::string& url);

/// Issues a request with the config's timeout, retry budget and rate limit.
/// Exposed for the adapters; maps httplib failures onto ErrorCodes.
class HttpTransport {
 public:
  explicit HttpTransport(ProviderConfig config);

  struct Response {
    int status = 0;
    std::string content_type;
    std::string body;
  };

  Response post_json(const std::string& path, const std::string& body) const;
  Response post_multipart(const std::string& path, const std::string& field_name,
                          const std::string& filename, const std::string& data,
                          const std::string& content_type, const std::string& model) const;
  Response get(const std::string& url_or_path) const;

  const ProviderConfig& config() const { return config_; }

 private:
  template <typename F>
  Response send(F&& fn) const;

  ProviderConfig config_;
  SplitUrl base_;
  std::shared_ptr<RateLimiter> limiter_;
};

class OpenAiChat : public ChatProvider {
 public:
  explicit OpenAiChat(ProviderConfig config) : http_(std::move(config)) {}

 protected:
  ChatResponse do_complete(const ChatRequest& req) override;

 private:
  HttpTransport http_;
};

class OpenAiEmbedder : public EmbeddingProvider {
 public:
  explicit OpenAiEmbedder(ProviderConfig config);
  std::uint32_t dimension() const override { return dimension_; }

 protected:
  std::vector<Embedding> do_embed(const std::vector<std::string>& texts) override;

 private:
  HttpTransport http_;
  std::uint32_t dimension_;
};

class OpenAiTranscriber : public Transcriber {
 public:
  explicit OpenAiTranscriber(ProviderConfig config) : http_(std::move(config)) {}

 protected:
  std::string do_transcribe(std::string_view media, MediaType type) override;

 private:
  HttpTransport http_;
};

class DuckDuckGoSearch : public SearchProvider {
 public:
  explicit DuckDuckGoSearch(ProviderConfig config);

 protected:
  std::vector<SearchHit> do_search(const std::string& query, int top_n) override;

 private:
  HttpTransport http_;
};

/// Parses DuckDuckGo's HTML results page. Exposed for tests.
std::vector<SearchHit> parse_duckduckgo_html(const std::string& html);

class ArxivApiSearch : public ArxivProvider {
 public:
  explicit ArxivApiSearch(ProviderConfig config);

 protected:
  std::vector<ArxivEntry> do_search(const std::string& query, int top_n) override;

 private:
  HttpTransport http_;
};

/// Parses an arXiv Atom feed. Exposed for tests.
std::vector<ArxivEntry> parse_arxiv_atom(const std::string& xml);

class HttpFetcher : public Fetcher {
 public:
  HttpFetcher(ProviderConfig config, std::size_t max_chars = kDefaultMaxPageChars);

 protected:
  RawPage do_fetch(const std::string& url) override;

 private:
  ProviderConfig config_;
};

}  // namespace sagekb
