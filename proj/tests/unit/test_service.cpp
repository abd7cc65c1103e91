#include <chrono>
#include <thread>

#include <gtest/gtest.h>
#include <httplib.h>

#include "sagekb/error.hpp"
#include "sagekb/service.hpp"
#include "test_support.hpp"

namespace sagekb {
namespace {

using json = nlohmann::json;
using testing::fixtures_dir;
using testing::read_file;

constexpr const char* kQuestion = "How does hair porosity affect moisture retention?";

class ServiceTest : public ::testing::Test {
 protected:
  ServiceTest() : engine_(config()), service_(engine_) {}

  EngineConfig config() const {
    EngineConfig c;
    c.root = dir_.path();
    c.mock = true;
    c.fixtures_dir = fixtures_dir().string();
    return c;
  }

  ApiResponse call(std::string method, std::string path, const json& body = nullptr) {
    ApiRequest r;
    r.method = std::move(method);
    r.path = std::move(path);
    if (!body.is_null()) r.body = body.dump();
    return service_.handle(r);
  }

  ApiResponse upload(const std::string& kb, const std::string& filename, std::string content) {
    ApiRequest r;
    r.method = "POST";
    r.path = "/kb/" + kb + "/documents";
    r.files.push_back({filename, std::move(content)});
    return service_.handle(r);
  }

  std::string make_kb(const std::string& name) {
    auto r = call("POST", "/kb", {{"name", name}});
    EXPECT_EQ(r.status, 201) << r.body;
    return json::parse(r.body)["kb_id"].get<std::string>();
  }

  std::string corpus_kb() {
    const auto kb = make_kb("corpus");
    for (const char* f : {"lincoln.txt", "shampoo.txt", "porosity.md"}) {
      EXPECT_EQ(upload(kb, f, read_file(fixtures_dir() / "corpus" / f)).status, 201);
    }
    return kb;
  }

  static json error_of(const ApiResponse& r) { return json::parse(r.body).at("error"); }

  testing::TempDir dir_;
  Engine engine_;
  Service service_;
};

TEST_F(ServiceTest, HealthAndUnknownRoutes) {
  EXPECT_EQ(call("GET", "/health").status, 200);
  const auto r = call("GET", "/nope");
  EXPECT_EQ(r.status, 404);
  EXPECT_EQ(error_of(r)["code"], "not_found");
  EXPECT_EQ(call("PUT", "/kb").status, 404);
}

TEST_F(ServiceTest, CreateListGetDelete) {
  const auto id = make_kb("notes");
  const auto list = json::parse(call("GET", "/kb").body);
  ASSERT_EQ(list.size(), 1u);
  EXPECT_EQ(list[0]["kb_id"], id);

  auto got = call("GET", "/kb/" + id);
  EXPECT_EQ(got.status, 200);
  EXPECT_EQ(json::parse(got.body)["name"], "notes");
  EXPECT_EQ(call("GET", "/kb/notes").status, 200);

  EXPECT_EQ(call("DELETE", "/kb/" + id).status, 204);
  const auto gone = call("GET", "/kb/" + id);
  EXPECT_EQ(gone.status, 404);
  EXPECT_EQ(error_of(gone)["code"], "kb_not_found");
}

TEST_F(ServiceTest, ValidationErrorsUseEnvelope) {
  make_kb("dup");
  const auto dup = call("POST", "/kb", {{"name", "dup"}});
  EXPECT_EQ(dup.status, 409);
  EXPECT_EQ(error_of(dup)["code"], "conflict");

  const auto missing = call("POST", "/kb", json::object());
  EXPECT_EQ(missing.status, 422);
  EXPECT_EQ(error_of(missing)["code"], "invalid_request");

  ApiRequest bad{"POST", "/kb", "{not json", "application/json", {}, {}};
  const auto malformed = service_.handle(bad);
  EXPECT_EQ(malformed.status, 422);
  EXPECT_EQ(error_of(malformed)["code"], "invalid_request");
  EXPECT_TRUE(error_of(malformed).contains("stage"));

  const auto wrong_type = call("POST", "/kb", {{"name", 7}});
  EXPECT_EQ(wrong_type.status, 422);
}

TEST_F(ServiceTest, UnknownKbIs404Everywhere) {
  for (const auto& [m, p] : std::vector<std::pair<std::string, std::string>>{
           {"GET", "/kb/missing"},
           {"DELETE", "/kb/missing"},
           {"GET", "/kb/missing/reports"},
           {"GET", "/kb/missing/reports/rpt-0000000000000000"}}) {
    const auto r = call(m, p);
    EXPECT_EQ(r.status, 404) << m << " " << p;
    EXPECT_EQ(error_of(r)["code"], "kb_not_found") << m << " " << p;
  }
  EXPECT_EQ(call("POST", "/kb/missing/chat", {{"query", "hi"}}).status, 404);
  EXPECT_EQ(call("POST", "/kb/missing/reports", {{"question", kQuestion}}).status, 404);
  EXPECT_EQ(upload("missing", "a.txt", "text").status, 404);
  EXPECT_EQ(call("POST", "/eval/runs", {{"kb_id", "missing"}, {"queries", json::array()}}).status, 404);
}

TEST_F(ServiceTest, UploadIngestsAndRejectsUnsupported) {
  const auto kb = make_kb("up");
  const auto ok = upload(kb, "lincoln.txt", read_file(fixtures_dir() / "corpus" / "lincoln.txt"));
  ASSERT_EQ(ok.status, 201) << ok.body;
  const auto body = json::parse(ok.body);
  EXPECT_GT(body["chunk_count"].get<int>(), 0);
  EXPECT_FALSE(body["deduplicated"].get<bool>());

  const auto before = testing::directory_digest(dir_.path());
  const auto bad = upload(kb, "blob.xyz", "whatever");
  EXPECT_EQ(bad.status, 422);
  EXPECT_EQ(error_of(bad)["code"], "invalid_request");
  EXPECT_EQ(error_of(bad)["stage"], "parse");
  EXPECT_EQ(testing::directory_digest(dir_.path()), before);

  ApiRequest none{"POST", "/kb/" + kb + "/documents", "", "multipart/form-data", {}, {}};
  EXPECT_EQ(service_.handle(none).status, 422);
}

TEST_F(ServiceTest, GetsAreIdempotent) {
  const auto kb = corpus_kb();
  const auto before = testing::directory_digest(dir_.path());
  const std::vector<std::string> paths = {"/kb", "/kb/" + kb, "/kb/" + kb + "/reports", "/health"};
  std::vector<std::string> first;
  for (const auto& p : paths) first.push_back(call("GET", p).body);
  std::vector<std::string> second;
  for (const auto& p : paths) second.push_back(call("GET", p).body);
  EXPECT_EQ(first, second);
  EXPECT_EQ(testing::directory_digest(dir_.path()), before);
}

TEST_F(ServiceTest, ChatAndStreamAgree) {
  const auto kb = corpus_kb();
  const json req = {{"query", "When was Abraham Lincoln born?"}, {"mode", "custom"}};
  const auto plain = call("POST", "/kb/" + kb + "/chat", req);
  ASSERT_EQ(plain.status, 200) << plain.body;
  const auto answer = json::parse(plain.body);
  EXPECT_FALSE(answer["answer"].get<std::string>().empty());

  json sreq = req;
  sreq["stream"] = true;
  const auto streamed = call("POST", "/kb/" + kb + "/chat", sreq);
  ASSERT_EQ(streamed.status, 200);
  EXPECT_EQ(streamed.content_type, "application/x-ndjson");
  ASSERT_GE(streamed.stream.size(), 2u);
  std::string text;
  for (std::size_t i = 0; i + 1 < streamed.stream.size(); ++i) {
    const auto line = json::parse(streamed.stream[i]);
    EXPECT_EQ(line["type"], "delta");
    text += line["text"].get<std::string>();
  }
  EXPECT_EQ(text, answer["answer"].get<std::string>());
  const auto trailer = json::parse(streamed.stream.back());
  EXPECT_EQ(trailer["type"], "references");
  EXPECT_EQ(trailer["references"], answer["references"]);

  EXPECT_EQ(call("POST", "/kb/" + kb + "/chat", {{"query", "  "}}).status, 422);
  EXPECT_EQ(call("POST", "/kb/" + kb + "/chat", {{"query", "x"}, {"mode", "fuzzy"}}).status, 422);
  EXPECT_EQ(call("POST", "/kb/" + kb + "/chat", {{"query", "x"}, {"mode", "graph"}, {"depth", 0}}).status, 422);
}

TEST_F(ServiceTest, ChatHistoryIsAccepted) {
  const auto kb = corpus_kb();
  const json req = {{"query", "When was he born?"},
                    {"history", json::array({{{"role", "user"}, {"content", "Tell me about Abraham Lincoln."}},
                                             {{"role", "assistant"}, {"content", "He was a president."}}})}};
  EXPECT_EQ(call("POST", "/kb/" + kb + "/chat", req).status, 200);
  const json bad = {{"query", "q"}, {"history", json::array({{{"role", "wizard"}, {"content", "x"}}})}};
  EXPECT_EQ(call("POST", "/kb/" + kb + "/chat", bad).status, 422);
}

TEST_F(ServiceTest, ReportLifecycle) {
  const auto kb = corpus_kb();
  EXPECT_EQ(call("POST", "/kb/" + kb + "/reports", {{"question", " "}}).status, 422);
  EXPECT_EQ(call("POST", "/kb/" + kb + "/reports", {{"question", kQuestion}, {"n_queries", 0}}).status, 422);

  const auto started = call("POST", "/kb/" + kb + "/reports", {{"question", kQuestion}, {"n_queries", 3}, {"top_m", 5}});
  ASSERT_EQ(started.status, 202) << started.body;
  const auto job_id = json::parse(started.body)["job_id"].get<std::string>();
  const auto report_id = json::parse(started.body)["report_id"].get<std::string>();

  const std::vector<std::string> order = {"pending", "searching", "scraping", "summarizing", "composing", "done"};
  std::vector<std::size_t> seen;
  json state;
  const auto deadline = std::chrono::steady_clock::now() + std::chrono::seconds(20);
  for (;;) {
    const auto r = call("GET", "/kb/" + kb + "/reports/jobs/" + job_id);
    ASSERT_EQ(r.status, 200);
    state = json::parse(r.body);
    const auto it = std::find(order.begin(), order.end(), state["status"].get<std::string>());
    ASSERT_NE(it, order.end()) << state.dump();
    seen.push_back(static_cast<std::size_t>(it - order.begin()));
    if (*it == "done" || std::chrono::steady_clock::now() > deadline) break;
    std::this_thread::sleep_for(std::chrono::milliseconds(2));
  }
  EXPECT_TRUE(std::is_sorted(seen.begin(), seen.end()));
  ASSERT_EQ(state["status"], "done") << state.dump();
  EXPECT_EQ(state["report_id"], report_id);

  std::vector<std::size_t> event_stages;
  for (const auto& e : state["events"]) {
    event_stages.push_back(std::find(order.begin(), order.end(), e["stage"].get<std::string>()) - order.begin());
  }
  EXPECT_TRUE(std::is_sorted(event_stages.begin(), event_stages.end()));

  const auto md = call("GET", "/kb/" + kb + "/reports/" + report_id);
  ASSERT_EQ(md.status, 200);
  EXPECT_EQ(md.content_type.rfind("text/markdown", 0), 0u);
  EXPECT_EQ(md.body.rfind("# ", 0), 0u);
  EXPECT_EQ(call("GET", "/kb/" + kb + "/reports/" + report_id + ".md").body, md.body);

  const auto list = json::parse(call("GET", "/kb/" + kb + "/reports").body);
  ASSERT_EQ(list.size(), 1u);
  EXPECT_EQ(list[0]["report_id"], report_id);

  const auto other = make_kb("other");
  EXPECT_EQ(call("GET", "/kb/" + other + "/reports/jobs/" + job_id).status, 404);
  EXPECT_EQ(call("GET", "/kb/" + kb + "/reports/jobs/job-nope").status, 404);
  EXPECT_EQ(call("GET", "/kb/" + kb + "/reports/rpt-nope").status, 404);
}

TEST_F(ServiceTest, EvalRunCompletes) {
  const auto kb = corpus_kb();
  const auto dataset = (fixtures_dir() / "eval" / "toy_queries.jsonl").string();
  EXPECT_EQ(call("POST", "/eval/runs", {{"kb_id", kb}}).status, 422);
  EXPECT_EQ(call("POST", "/eval/runs", {{"kb_id", kb}, {"dataset", dataset}, {"modes", "vector,nope"}}).status, 422);

  const auto started = call("POST", "/eval/runs", {{"kb_id", kb}, {"dataset", dataset}, {"modes", {"vector", "graph"}}});
  ASSERT_EQ(started.status, 202) << started.body;
  const auto run_id = json::parse(started.body)["run_id"].get<std::string>();
  service_.jobs().pool().drain();

  const auto r = call("GET", "/eval/runs/" + run_id);
  ASSERT_EQ(r.status, 200);
  const auto body = json::parse(r.body);
  EXPECT_EQ(body["status"], "done") << body.dump();
  EXPECT_EQ(body["done"], body["total"]);
  EXPECT_EQ(body["records"].size(), body["total"].get<std::size_t>());
  EXPECT_EQ(call("GET", "/eval/runs/run-999999").status, 404);

  const json inline_q = {{"kb_id", kb},
                         {"modes", "vector"},
                         {"queries", json::array({{{"text", "When was Abraham Lincoln born?"},
                                                   {"difficulty", "easy"},
                                                   {"occurrence", "low"},
                                                   {"reference_answer", "Abraham Lincoln was born in 1809."}}})}};
  const auto second = call("POST", "/eval/runs", inline_q);
  ASSERT_EQ(second.status, 202) << second.body;
  service_.jobs().pool().drain();
  const auto done = json::parse(call("GET", "/eval/runs/" + json::parse(second.body)["run_id"].get<std::string>()).body);
  EXPECT_EQ(done["records"].size(), 1u);
}

TEST(ServiceHelpers, ListenAddress) {
  EXPECT_EQ(parse_listen_addr("127.0.0.1:8080"), (std::pair<std::string, int>{"127.0.0.1", 8080}));
  EXPECT_EQ(parse_listen_addr(":9000"), (std::pair<std::string, int>{"0.0.0.0", 9000}));
  EXPECT_EQ(parse_listen_addr("8000"), (std::pair<std::string, int>{"127.0.0.1", 8000}));
  EXPECT_THROW(parse_listen_addr("host:abc"), Error);
  EXPECT_THROW(parse_listen_addr("host:70000"), Error);
}

TEST(ServiceHelpers, StreamLinesConcatenateToAnswer) {
  for (const std::string text : {"", "one", "a b c d e f g h i j", "  leading and trailing  ", "x\n\ny z"}) {
    AnswerWithReferences a;
    a.answer = text;
    const auto lines = chat_stream_lines(a, 3);
    std::string joined;
    for (std::size_t i = 0; i + 1 < lines.size(); ++i) joined += json::parse(lines[i])["text"].get<std::string>();
    EXPECT_EQ(joined, text);
    EXPECT_EQ(json::parse(lines.back())["type"], "references");
  }
}

TEST_F(ServiceTest, LiveSocketSmoke) {
  std::thread server([this] { service_.serve("127.0.0.1:0"); });
  ASSERT_TRUE(service_.wait_until_listening(5000));
  httplib::Client cli("127.0.0.1", service_.bound_port());
  cli.set_read_timeout(10, 0);

  auto health = cli.Get("/health");
  ASSERT_TRUE(health);
  EXPECT_EQ(health->status, 200);

  auto created = cli.Post("/kb", R"({"name":"live"})", "application/json");
  ASSERT_TRUE(created);
  EXPECT_EQ(created->status, 201);
  const auto kb = json::parse(created->body)["kb_id"].get<std::string>();

  httplib::MultipartFormDataItems items = {
      {"file", read_file(fixtures_dir() / "corpus" / "lincoln.txt"), "lincoln.txt", "text/plain"}};
  auto up = cli.Post("/kb/" + kb + "/documents", items);
  ASSERT_TRUE(up);
  EXPECT_EQ(up->status, 201) << up->body;

  httplib::Headers ndjson = {{"Accept", "application/x-ndjson"}};
  auto streamed = cli.Post("/kb/" + kb + "/chat", ndjson, R"({"query":"When was Abraham Lincoln born?"})",
                           "application/json");
  ASSERT_TRUE(streamed);
  EXPECT_EQ(streamed->status, 200);
  EXPECT_NE(streamed->body.find("\"type\":\"references\""), std::string::npos);

  auto missing = cli.Get("/kb/nope");
  ASSERT_TRUE(missing);
  EXPECT_EQ(missing->status, 404);
  EXPECT_EQ(json::parse(missing->body)["error"]["code"], "kb_not_found");

  service_.stop();
  server.join();
}

}  // namespace
}  // namespace sagekb
