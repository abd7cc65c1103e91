#pragma once

// Deterministic, offline implementations of every provider interface.
// Identical inputs produce bit-identical outputs across runs and processes.

#include <atomic>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "sagekb/providers.hpp"

namespace sagekb {

/// Chat mock driven by substring rules. A rule fires when every one of its
/// `contains` strings occurs in the concatenated request messages; the first
/// matching rule wins. Without a match the default response is used, or a
/// provider_bad_response error when there is none. A fallback provider, when
/// set, answers prompts no rule matches before the default is considered.
class ScriptedChat : public ChatProvider {
 public:
  struct Rule {
    std::vector<std::string> contains;
    std::string response;
    std::optional<ErrorCode> error;  // fire this error instead of responding
  };

  ScriptedChat() = default;
  explicit ScriptedChat(std::vector<Rule> rules,
                        std::optional<std::string> default_response = std::nullopt)
      : rules_(std::move(rules)), default_(std::move(default_response)) {}

  static std::shared_ptr<ScriptedChat> from_json(const nlohmann::json& j);

  ScriptedChat& on(std::vector<std::string> contains, std::string response);
  ScriptedChat& fail_on(std::vector<std::string> contains, ErrorCode code);
  ScriptedChat& otherwise(std::string response);
  ScriptedChat& fallback(std::shared_ptr<ChatProvider> provider);

  std::size_t call_count() const;
  std::vector<std::string> prompts() const;

 protected:
  ChatResponse do_complete(const ChatRequest& req) override;

 private:
  std::vector<Rule> rules_;
  std::optional<std::string> default_;
  std::shared_ptr<ChatProvider> fallback_;
  mutable std::mutex mu_;
  std::vector<std::string> prompts_;
};

/// Chat mock backed by a callable receiving the concatenated prompt.
class FunctionChat : public ChatProvider {
 public:
  using Fn = std::function<std::string(const std::string& prompt)>;
  explicit FunctionChat(Fn fn) : fn_(std::move(fn)) {}

 protected:
  ChatResponse do_complete(const ChatRequest& req) override;

 private:
  Fn fn_;
};

/// Rule-based responder for every built-in task. Reads the "### task:" line
/// and answers from the prompt text alone: sentence-level triples, extractive
/// answers citing the best-matching passage, word-overlap judgements. Meant
/// for offline demos where no scripted fixture covers the input.
class HeuristicChat : public ChatProvider {
 public:
  std::size_t call_count() const { return calls_.load(); }

 protected:
  ChatResponse do_complete(const ChatRequest& req) override;

 private:
  std::atomic<std::size_t> calls_{0};
};

/// Task name from a prompt's "### task: <name>" header, or "" when absent.
std::string prompt_task(std::string_view prompt);

/// Fails the first `failures` calls with `code`, then delegates.
class FlakyChat : public ChatProvider {
 public:
  FlakyChat(std::shared_ptr<ChatProvider> inner, int failures,
            ErrorCode code = ErrorCode::provider_transport)
      : inner_(std::move(inner)), remaining_(failures), code_(code) {}

  int attempts() const { return attempts_.load(); }

 protected:
  ChatResponse do_complete(const ChatRequest& req) override;

 private:
  std::shared_ptr<ChatProvider> inner_;
  std::atomic<int> remaining_;
  std::atomic<int> attempts_{0};
  ErrorCode code_;
};

/// Concatenates message contents the way the mocks see them.
std::string flatten_messages(const ChatRequest& req);

/// Hash-seeded embedder. `whole_text`: the 64-bit FNV-1a hash of the text
/// seeds mt19937_64, each draw maps to [-1, 1) via its top 53 bits, and the
/// vector is normalized. `bag_of_words`: each lowercase token contributes
/// its own seeded vector, so texts sharing words land near each other.
class HashEmbedder : public EmbeddingProvider {
 public:
  enum class Mode { whole_text, bag_of_words };

  explicit HashEmbedder(std::uint32_t dimension = 64, Mode mode = Mode::whole_text)
      : dimension_(dimension), mode_(mode) {}

  std::uint32_t dimension() const override { return dimension_; }
  std::size_t call_count() const { return calls_.load(); }

  /// Fail every call after the first `n` successful ones (outage injection).
  void fail_after(std::size_t n) { fail_after_ = n; }

 protected:
  std::vector<Embedding> do_embed(const std::vector<std::string>& texts) override;

 private:
  std::uint32_t dimension_;
  Mode mode_;
  std::atomic<std::size_t> calls_{0};
  std::optional<std::size_t> fail_after_;
};

/// Unnormalized seeded draw used by HashEmbedder (exposed for tools).
std::vector<double> seeded_draw(std::uint64_t seed, std::uint32_t dimension);

/// Search mock: exact query → hits, with an optional fallback list and a set
/// of queries that fail with a transport error.
class FixtureSearch : public SearchProvider {
 public:
  FixtureSearch() = default;
  static std::shared_ptr<FixtureSearch> from_json(const nlohmann::json& j);

  FixtureSearch& add(std::string query, std::vector<SearchHit> hits);
  FixtureSearch& fallback(std::vector<SearchHit> hits);
  FixtureSearch& fail(std::string query);
  FixtureSearch& fail_all();

 protected:
  std::vector<SearchHit> do_search(const std::string& query, int top_n) override;

 private:
  std::map<std::string, std::vector<SearchHit>> by_query_;
  std::optional<std::vector<SearchHit>> fallback_;
  std::vector<std::string> failing_;
  bool fail_all_ = false;
};

/// arXiv mock: returns fixture entries (in fixture order) whose title or
/// abstract contains any query word of three or more letters.
class FixtureArxiv : public ArxivProvider {
 public:
  /// Entries without a url get https://arxiv.org/abs/<id>.
  explicit FixtureArxiv(std::vector<ArxivEntry> entries);
  static std::shared_ptr<FixtureArxiv> from_json(const nlohmann::json& j);

 protected:
  std::vector<ArxivEntry> do_search(const std::string& query, int top_n) override;

 private:
  std::vector<ArxivEntry> entries_;
};

/// Page mock: url → raw page. Unknown urls are 404s.
class FixtureFetcher : public Fetcher {
 public:
  explicit FixtureFetcher(std::size_t max_chars = kDefaultMaxPageChars) : Fetcher(max_chars) {}
  static std::shared_ptr<FixtureFetcher> from_json(const nlohmann::json& j);

  FixtureFetcher& add(std::string url, RawPage page);
  FixtureFetcher& add_html(std::string url, std::string html);
  FixtureFetcher& fail(std::string url);

 protected:
  RawPage do_fetch(const std::string& url) override;

 private:
  std::map<std::string, RawPage> pages_;
  std::vector<std::string> failing_;
};

class FixedTranscriber : public Transcriber {
 public:
  explicit FixedTranscriber(std::string transcript) : transcript_(std::move(transcript)) {}

 protected:
  std::string do_transcribe(std::string_view, MediaType) override { return transcript_; }

 private:
  std::string transcript_;
};

}  // namespace sagekb
