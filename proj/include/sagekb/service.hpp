#pragma once

#include <atomic>
#include <condition_variable>
#include <deque>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "sagekb/engine.hpp"

namespace sagekb {

/// Fixed-size pool running queued background jobs.
class WorkerPool {
 public:
  explicit WorkerPool(std::size_t workers);
  ~WorkerPool();
  WorkerPool(const WorkerPool&) = delete;
  WorkerPool& operator=(const WorkerPool&) = delete;

  void submit(std::function<void()> task);
  /// Blocks until the queue is empty and no task is running.
  void drain();

 private:
  void loop();

  std::mutex mu_;
  std::condition_variable cv_;
  std::condition_variable idle_cv_;
  std::deque<std::function<void()>> queue_;
  std::vector<std::thread> threads_;
  std::size_t running_ = 0;
  bool stop_ = false;
};

enum class RunStatus { pending, running, done, failed };

std::string_view to_string(RunStatus s);

struct EvalRunState {
  std::string run_id;
  std::string kb_id;
  std::vector<RetrievalMode> modes;
  std::size_t total = 0;
  std::size_t done = 0;
  RunStatus status = RunStatus::pending;
  std::optional<SuiteResult> result;
  std::optional<std::string> error_code;
  std::optional<std::string> error_message;
};

/// Report and eval jobs submitted through the API.
class JobBoard {
 public:
  explicit JobBoard(std::size_t workers) : pool_(workers) {}

  std::shared_ptr<ReportJob> add_report(std::shared_ptr<ReportJob> job);
  std::shared_ptr<ReportJob> report(const std::string& job_id) const;

  std::string add_eval(EvalRunState state);
  void update_eval(const std::string& run_id, const std::function<void(EvalRunState&)>& fn);
  std::optional<EvalRunState> eval(const std::string& run_id) const;

  WorkerPool& pool() { return pool_; }
  std::uint64_t next_seq() { return ++seq_; }

 private:
  mutable std::mutex mu_;
  std::map<std::string, std::shared_ptr<ReportJob>> reports_;
  std::map<std::string, EvalRunState> evals_;
  std::atomic<std::uint64_t> seq_{0};
  WorkerPool pool_;
};

/// One request as the router sees it, independent of the HTTP library.
struct ApiRequest {
  std::string method;
  std::string path;
  std::string body;
  std::string content_type;
  std::map<std::string, std::string> query;
  struct File {
    std::string filename;
    std::string content;
  };
  std::vector<File> files;  // multipart uploads
};

struct ApiResponse {
  int status = 200;
  std::string content_type = "application/json";
  std::string body;
  /// NDJSON chunks for streamed chat; body is empty when set.
  std::vector<std::string> stream;
};

/// Routes and validates API requests against an Engine.
class Service {
 public:
  Service(Engine& engine, std::size_t workers = 2);

  ApiResponse handle(const ApiRequest& req);

  /// Binds and serves until stop(). `addr` is "host:port"; port 0 picks a
  /// free port, readable through bound_port() once listening.
  void serve(const std::string& addr);
  void stop();
  int bound_port() const { return port_.load(); }
  bool wait_until_listening(int timeout_ms) const;

  JobBoard& jobs() { return jobs_; }

 private:
  ApiResponse create_kb(const nlohmann::json& body);
  ApiResponse list_kbs();
  ApiResponse get_kb(const std::string& id);
  ApiResponse delete_kb(const std::string& id);
  ApiResponse upload(const std::string& id, const ApiRequest& req);
  ApiResponse chat(const std::string& id, const nlohmann::json& body, bool want_stream);
  ApiResponse start_report(const std::string& id, const nlohmann::json& body);
  ApiResponse report_job(const std::string& id, const std::string& job_id);
  ApiResponse list_reports(const std::string& id);
  ApiResponse download_report(const std::string& id, const std::string& report_id);
  ApiResponse start_eval(const nlohmann::json& body);
  ApiResponse eval_run(const std::string& run_id);

  Engine& engine_;
  JobBoard jobs_;
  std::atomic<int> port_{0};
  std::atomic<bool> listening_{false};
  std::mutex server_mu_;
  void* server_ = nullptr;  // httplib::Server, kept out of this header
};

/// ApiError envelope: {"error": {"code", "message", "stage"}}.
ApiResponse error_response(const Error& e);

/// "host:port" from an address string; a bare port binds 127.0.0.1.
std::pair<std::string, int> parse_listen_addr(const std::string& addr);

/// Splits an answer into the NDJSON stream the chat endpoint emits: delta
/// lines whose texts concatenate to the answer, then a references trailer.
std::vector<std::string> chat_stream_lines(const AnswerWithReferences& answer, std::size_t words_per_chunk = 4);

}  // namespace sagekb
