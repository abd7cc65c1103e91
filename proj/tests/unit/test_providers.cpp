#include <gtest/gtest.h>

#include <httplib.h>

#include <cmath>
#include <thread>

#include <nlohmann/json.hpp>

#include "oracles.hpp"
#include "sagekb/http_providers.hpp"
#include "sagekb/mock_providers.hpp"
#include "sagekb/vector_index.hpp"
#include "test_support.hpp"

namespace sagekb {
namespace {

using nlohmann::json;

TEST(ChatRequestValidation, RejectsEmptyAndMalformedRequests) {
  ScriptedChat chat;
  chat.otherwise("x");
  EXPECT_THROW(chat.complete(ChatRequest{}), Error);
  ChatRequest assistant_last;
  assistant_last.messages = {{Role::user, "q"}, {Role::assistant, "a"}};
  EXPECT_THROW(chat.complete(assistant_last), Error);
  auto hot = ChatRequest::single_turn("q");
  hot.temperature = 3.0;
  EXPECT_THROW(chat.complete(hot), Error);
  EXPECT_EQ(chat.call_count(), 0u);
}

TEST(ScriptedChatTest, FirstMatchingRuleWins) {
  ScriptedChat chat;
  chat.on({"Q"}, "A").on({"Q", "more"}, "B").otherwise("D");
  EXPECT_EQ(chat.complete(ChatRequest::single_turn("a Q here")).text, "A");
  EXPECT_EQ(chat.complete(ChatRequest::single_turn("nothing")).text, "D");
  EXPECT_EQ(chat.call_count(), 2u);
}

TEST(ScriptedChatTest, NoMatchWithoutDefaultIsBadResponse) {
  ScriptedChat chat;
  try {
    chat.complete(ChatRequest::single_turn("x"));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::provider_bad_response);
  }
}

TEST(ScriptedChatTest, JsonRulesErrorsAndFallback) {
  auto chat = ScriptedChat::from_json(json::parse(R"({
    "fallback": "heuristic",
    "rules": [
      {"contains": "boom", "error": "provider_refusal"},
      {"contains": ["alpha", "beta"], "response": "AB"}
    ]})"));
  EXPECT_EQ(chat->complete(ChatRequest::single_turn("alpha beta")).text, "AB");
  try {
    chat->complete(ChatRequest::single_turn("boom"));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::provider_refusal);
  }
  const auto r = chat->complete(ChatRequest::single_turn("### task: judge_relevance_binary (v1)\nQuery: x\nResponse: y"));
  EXPECT_EQ(r.text, "NO");
  EXPECT_THROW(ScriptedChat::from_json(json::parse(R"({"rules":[{"contains":"x","error":"nope"}]})")), Error);
}

TEST(RetryContract, SucceedsAfterFewerFailuresThanBudget) {
  auto inner = std::make_shared<ScriptedChat>();
  inner->otherwise("ok");
  RetryPolicy policy{2, std::chrono::milliseconds(1)};
  auto flaky = std::make_shared<FlakyChat>(inner, 2);
  RetryingChat chat(flaky, policy);
  EXPECT_EQ(chat.complete(ChatRequest::single_turn("q")).text, "ok");
  EXPECT_EQ(flaky->attempts(), 3);
}

TEST(RetryContract, FailsWhenFailuresExceedBudget) {
  auto inner = std::make_shared<ScriptedChat>();
  inner->otherwise("ok");
  RetryPolicy policy{2, std::chrono::milliseconds(1)};
  auto flaky = std::make_shared<FlakyChat>(inner, 3);
  RetryingChat chat(flaky, policy);
  EXPECT_THROW(chat.complete(ChatRequest::single_turn("q")), Error);
  EXPECT_EQ(flaky->attempts(), 3);
}

TEST(RetryContract, NonRetryableErrorsAreNotRetried) {
  auto inner = std::make_shared<ScriptedChat>();
  inner->otherwise("ok");
  auto flaky = std::make_shared<FlakyChat>(inner, 1, ErrorCode::provider_refusal);
  RetryingChat chat(flaky, RetryPolicy{5, std::chrono::milliseconds(1)});
  EXPECT_THROW(chat.complete(ChatRequest::single_turn("q")), Error);
  EXPECT_EQ(flaky->attempts(), 1);
}

TEST(HashEmbedderTest, MatchesIndependentRecomputation) {
  HashEmbedder emb(64);
  for (const std::string text : {"abc", "Abraham Lincoln", "x y z", "\xC3\xA9t\xC3\xA9"}) {
    const auto got = emb.embed_one(text);
    const auto want = oracle::hash_embedding(text, 64);
    ASSERT_EQ(got.size(), want.size());
    for (std::size_t i = 0; i < got.size(); ++i) EXPECT_NEAR(got[i], want[i], 1e-7) << text;
  }
}

TEST(HashEmbedderTest, DeterministicUnitNormAndEqualForEqualText) {
  HashEmbedder a(64), b(64);
  const auto va = a.embed({"a", "a", "b"});
  EXPECT_EQ(va[0], va[1]);
  EXPECT_NE(va[0], va[2]);
  EXPECT_EQ(b.embed_one("a"), va[0]);
  for (const auto& v : va) EXPECT_NEAR(l2_norm(v), 1.0, 1e-6);
  EXPECT_THROW(a.embed({""}), Error);
}

TEST(HashEmbedderTest, BagOfWordsPutsSharedWordsClose) {
  HashEmbedder emb(64, HashEmbedder::Mode::bag_of_words);
  const auto v = emb.embed({"hair porosity moisture", "porosity of hair", "civil war generals"});
  auto dot = [](const Embedding& x, const Embedding& y) {
    double s = 0;
    for (std::size_t i = 0; i < x.size(); ++i) s += x[i] * y[i];
    return s;
  };
  EXPECT_GT(dot(v[0], v[1]), dot(v[0], v[2]));
}

TEST(HashEmbedderTest, OutageInjection) {
  HashEmbedder emb(8);
  emb.fail_after(1);
  EXPECT_NO_THROW(emb.embed_one("a"));
  EXPECT_THROW(emb.embed_one("b"), Error);
}

TEST(SearchMocks, TruncatesAndRanks) {
  FixtureSearch s;
  std::vector<SearchHit> hits;
  for (int i = 0; i < 10; ++i) hits.push_back({"https://e.org/" + std::to_string(i), "t", "", 0});
  s.add("q", hits);
  const auto got = s.search("q", 3);
  ASSERT_EQ(got.size(), 3u);
  for (int i = 0; i < 3; ++i) EXPECT_EQ(got[i].rank, i + 1);
  EXPECT_THROW(s.search("q", 0), Error);
  EXPECT_THROW(s.search("   ", 3), Error);
  s.fail("bad");
  EXPECT_THROW(s.search("bad", 3), Error);
}

TEST(SearchMocks, ArxivFixtureOrderAndLimits) {
  std::vector<ArxivEntry> entries;
  for (int i = 0; i < 5; ++i) entries.push_back({"id" + std::to_string(i), "keratin study", "abstract", ""});
  FixtureArxiv a(entries);
  const auto got = a.search("keratin", 2);
  ASSERT_EQ(got.size(), 2u);
  EXPECT_EQ(got[0].id, "id0");
  EXPECT_EQ(got[1].id, "id1");
  EXPECT_TRUE(a.search("zebra", 2).empty());
  EXPECT_THROW(a.search("keratin", -1), Error);
}

TEST(FetcherMock, CleansHtmlAndCapsLength) {
  FixtureFetcher f(100);
  f.add_html("https://e.org/a", "<html><body><p>hello</p></body></html>");
  f.add("https://e.org/404", RawPage{404, "text/html", "missing"});
  f.add_html("https://e.org/big", "<p>" + std::string(200000, 'x') + "</p>");
  EXPECT_EQ(f.fetch("https://e.org/a").text, "hello");
  try {
    f.fetch("https://e.org/404");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::provider_http);
  }
  const auto big = f.fetch("https://e.org/big");
  EXPECT_TRUE(big.truncated);
  EXPECT_EQ(big.text, std::string(100, 'x') + std::string(kTruncationMarker));
  EXPECT_THROW(f.fetch("not a url"), Error);
  EXPECT_THROW(f.fetch("https://e.org/unknown"), Error);
}

TEST(TranscriberMock, FixedTranscriptAndPreconditions) {
  FixedTranscriber t("hello world");
  EXPECT_EQ(t.transcribe("bytes", MediaType::audio), "hello world");
  EXPECT_THROW(t.transcribe("", MediaType::video), Error);
  ProviderSet none;
  try {
    none.require_transcriber();
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::unsupported);
  }
}

TEST(ProviderConfigTest, Validation) {
  ProviderConfig c;
  c.timeout_seconds = 0;
  EXPECT_THROW(c.validate(), Error);
  c.timeout_seconds = 1;
  c.retry.max_retries = -1;
  EXPECT_THROW(c.validate(), Error);
}

TEST(MockProviderLoading, FixtureDirectory) {
  const auto set = load_mock_providers(testing::fixtures_dir().string());
  ASSERT_TRUE(set.chat && set.embedder && set.web_search && set.arxiv && set.fetcher && set.transcriber);
  EXPECT_EQ(set.embedder->dimension(), 64u);
  EXPECT_EQ(set.web_search->search("low porosity hair moisture retention", 5).size(), 2u);
  testing::TempDir empty;
  const auto bare = load_mock_providers(empty.str(), 16);
  EXPECT_EQ(bare.embedder->dimension(), 16u);
  EXPECT_EQ(bare.transcriber, nullptr);
  EXPECT_EQ(bare.chat->complete(ChatRequest::single_turn("### task: query_entities (v1)\nQuestion: Who was Abraham Lincoln?")).text,
            "Abraham Lincoln");
}

// A local OpenAI-compatible endpoint exercising the wire adapter.
class FakeOpenAi : public ::testing::Test {
 protected:
  void SetUp() override {
    server_.Post("/v1/chat/completions", [this](const httplib::Request& req, httplib::Response& res) {
      const auto body = json::parse(req.body);
      last_auth_ = req.get_header_value("Authorization");
      last_model_ = body.at("model").get<std::string>();
      const std::string content = body.at("messages").back().at("content").get<std::string>();
      if (++chat_calls_ <= fail_first_) {
        res.status = 503;
        res.set_content(R"({"error":{"message":"busy"}})", "application/json");
        return;
      }
      if (content == "filtered") {
        res.status = 400;
        res.set_content(R"({"error":{"code":"content_filter","message":"blocked"}})", "application/json");
        return;
      }
      json out = {{"choices", {{{"message", {{"role", "assistant"}, {"content", "echo: " + content}}},
                                {"finish_reason", "stop"}}}},
                  {"usage", {{"prompt_tokens", 7}, {"completion_tokens", 3}}}};
      res.set_content(out.dump(), "application/json");
    });
    server_.Post("/v1/embeddings", [](const httplib::Request& req, httplib::Response& res) {
      const auto body = json::parse(req.body);
      json data = json::array();
      int i = 0;
      for (const auto& text : body.at("input")) {
        const auto v = oracle::hash_embedding(text.get<std::string>(), 8);
        std::vector<float> scaled;
        for (float x : v) scaled.push_back(3.0f * x);
        data.push_back({{"index", i++}, {"embedding", scaled}});
      }
      std::reverse(data.begin(), data.end());
      res.set_content(json{{"data", data}}.dump(), "application/json");
    });
    port_ = server_.bind_to_any_port("127.0.0.1");
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
  }

  void TearDown() override {
    server_.stop();
    thread_.join();
  }

  ProviderConfig config(int retries = 0) const {
    ProviderConfig c;
    c.endpoint = "http://127.0.0.1:" + std::to_string(port_) + "/v1";
    c.api_key_env = "SAGEKB_TEST_KEY";
    c.model = "test-model";
    c.timeout_seconds = 5;
    c.retry = RetryPolicy{retries, std::chrono::milliseconds(1)};
    c.embedding_dimension = 8;
    return c;
  }

  httplib::Server server_;
  std::thread thread_;
  int port_ = 0;
  std::atomic<int> chat_calls_{0};
  int fail_first_ = 0;
  std::string last_auth_;
  std::string last_model_;
};

TEST_F(FakeOpenAi, ChatRoundTrip) {
  setenv("SAGEKB_TEST_KEY", "sk-test", 1);
  OpenAiChat chat(config());
  const auto r = chat.complete(ChatRequest::single_turn("hi"));
  EXPECT_EQ(r.text, "echo: hi");
  EXPECT_EQ(r.usage.prompt_tokens, 7);
  EXPECT_EQ(last_auth_, "Bearer sk-test");
  EXPECT_EQ(last_model_, "test-model");
}

TEST_F(FakeOpenAi, RetriesServerErrorsWithinBudget) {
  fail_first_ = 1;
  OpenAiChat chat(config(2));
  EXPECT_EQ(chat.complete(ChatRequest::single_turn("x")).text, "echo: x");
  EXPECT_EQ(chat_calls_.load(), 2);
}

TEST_F(FakeOpenAi, ContentFilterIsRefusal) {
  OpenAiChat chat(config());
  try {
    chat.complete(ChatRequest::single_turn("filtered"));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::provider_refusal);
  }
}

TEST_F(FakeOpenAi, EmbeddingsReorderedAndNormalized) {
  OpenAiEmbedder emb(config());
  const auto v = emb.embed({"a", "b"});
  ASSERT_EQ(v.size(), 2u);
  const auto want = oracle::hash_embedding("a", 8);
  for (std::size_t i = 0; i < 8; ++i) EXPECT_NEAR(v[0][i], want[i], 1e-6);
  EXPECT_NEAR(l2_norm(v[1]), 1.0, 1e-6);
}

TEST(UnreachableEndpoint, TransportErrorAfterRetries) {
  ProviderConfig c;
  c.endpoint = "http://127.0.0.1:9/v1";
  c.timeout_seconds = 1;
  c.retry = RetryPolicy{1, std::chrono::milliseconds(1)};
  OpenAiChat chat(c);
  try {
    chat.complete(ChatRequest::single_turn("x"));
    FAIL();
  } catch (const Error& e) {
    EXPECT_TRUE(e.code() == ErrorCode::provider_transport || e.code() == ErrorCode::provider_timeout);
  }
}

TEST(WireParsers, DuckDuckGoAndArxiv) {
  const std::string html = R"(<div class="result"><a class="result__a" href="//duckduckgo.com/l/?uddg=https%3A%2F%2Fexample.org%2Fa&amp;rut=x">Example &amp; A</a>
<a class="result__snippet">First snippet</a></div>
<div class="result"><a class="result__a" href="https://example.org/b">B</a></div>)";
  const auto hits = parse_duckduckgo_html(html);
  ASSERT_EQ(hits.size(), 2u);
  EXPECT_EQ(hits[0].url, "https://example.org/a");
  EXPECT_EQ(hits[0].title, "Example & A");
  EXPECT_EQ(hits[1].url, "https://example.org/b");

  const std::string atom = R"(<feed><entry><id>http://arxiv.org/abs/2101.00001v1</id>
<title>Water  Diffusion</title><summary> Damaged fibres absorb water. </summary></entry></feed>)";
  const auto entries = parse_arxiv_atom(atom);
  ASSERT_EQ(entries.size(), 1u);
  EXPECT_EQ(entries[0].title, "Water Diffusion");
  EXPECT_EQ(entries[0].abstract, "Damaged fibres absorb water.");
  EXPECT_EQ(entries[0].url, "https://arxiv.org/abs/2101.00001v1");
  EXPECT_EQ(entries[0].id, "2101.00001v1");
}

}  // namespace
}  // namespace sagekb
