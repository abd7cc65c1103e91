#include "sagekb/service.hpp"

#include <regex>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "sagekb/error.hpp"

namespace sagekb {

using json = nlohmann::json;

WorkerPool::WorkerPool(std::size_t workers) {
  if (workers == 0) workers = 1;
  for (std::size_t i = 0; i < workers; ++i) threads_.emplace_back([this] { loop(); });
}

WorkerPool::~WorkerPool() {
  {
    std::lock_guard lock(mu_);
    stop_ = true;
  }
  cv_.notify_all();
  for (auto& t : threads_) t.join();
}

void WorkerPool::submit(std::function<void()> task) {
  {
    std::lock_guard lock(mu_);
    queue_.push_back(std::move(task));
  }
  cv_.notify_one();
}

void WorkerPool::drain() {
  std::unique_lock lock(mu_);
  idle_cv_.wait(lock, [this] { return queue_.empty() && running_ == 0; });
}

void WorkerPool::loop() {
  for (;;) {
    std::function<void()> task;
    {
      std::unique_lock lock(mu_);
      cv_.wait(lock, [this] { return stop_ || !queue_.empty(); });
      if (queue_.empty()) return;
      task = std::move(queue_.front());
      queue_.pop_front();
      ++running_;
    }
    try {
      task();
    } catch (const std::exception& e) {
      spdlog::error("background task failed: {}", e.what());
    }
    {
      std::lock_guard lock(mu_);
      --running_;
    }
    idle_cv_.notify_all();
  }
}

std::string_view to_string(RunStatus s) {
  switch (s) {
    case RunStatus::pending: return "pending";
    case RunStatus::running: return "running";
    case RunStatus::done: return "done";
    case RunStatus::failed: return "failed";
  }
  return "failed";
}

std::shared_ptr<ReportJob> JobBoard::add_report(std::shared_ptr<ReportJob> job) {
  std::lock_guard lock(mu_);
  reports_[job->state().job_id] = job;
  return job;
}

std::shared_ptr<ReportJob> JobBoard::report(const std::string& job_id) const {
  std::lock_guard lock(mu_);
  auto it = reports_.find(job_id);
  return it == reports_.end() ? nullptr : it->second;
}

std::string JobBoard::add_eval(EvalRunState state) {
  std::lock_guard lock(mu_);
  state.run_id = fmt::format("run-{:06d}", next_seq());
  const std::string id = state.run_id;
  evals_.emplace(id, std::move(state));
  return id;
}

void JobBoard::update_eval(const std::string& run_id, const std::function<void(EvalRunState&)>& fn) {
  std::lock_guard lock(mu_);
  auto it = evals_.find(run_id);
  if (it != evals_.end()) fn(it->second);
}

std::optional<EvalRunState> JobBoard::eval(const std::string& run_id) const {
  std::lock_guard lock(mu_);
  auto it = evals_.find(run_id);
  if (it == evals_.end()) return std::nullopt;
  return it->second;
}

ApiResponse error_response(const Error& e) {
  const std::string code(api_code(e.code()));
  json err = {{"code", code}, {"message", e.what()}};
  err["stage"] = e.stage() ? json(*e.stage()) : json(nullptr);
  return {http_status(code), "application/json", json{{"error", err}}.dump(), {}};
}

std::pair<std::string, int> parse_listen_addr(const std::string& addr) {
  const std::string a = trim(addr);
  const auto colon = a.rfind(':');
  std::string host = "127.0.0.1";
  std::string port = a;
  if (colon != std::string::npos) {
    host = a.substr(0, colon);
    port = a.substr(colon + 1);
    if (host.empty()) host = "0.0.0.0";
  }
  try {
    std::size_t used = 0;
    const int p = std::stoi(port, &used);
    if (used != port.size() || p < 0 || p > 65535) throw std::out_of_range("port");
    return {host, p};
  } catch (const std::exception&) {
    throw Error(ErrorCode::invalid_argument, fmt::format("bad listen address '{}'", addr));
  }
}

std::vector<std::string> chat_stream_lines(const AnswerWithReferences& answer, std::size_t words_per_chunk) {
  std::vector<std::string> lines;
  std::size_t start = 0;
  std::size_t words = 0;
  bool in_word = false;
  for (std::size_t i = 0; i < answer.answer.size(); ++i) {
    const bool space = std::isspace(static_cast<unsigned char>(answer.answer[i])) != 0;
    if (!space && !in_word && ++words > words_per_chunk) {
      lines.push_back(json{{"type", "delta"}, {"text", answer.answer.substr(start, i - start)}}.dump());
      start = i;
      words = 1;
    }
    in_word = !space;
  }
  if (start < answer.answer.size()) {
    lines.push_back(json{{"type", "delta"}, {"text", answer.answer.substr(start)}}.dump());
  }
  json trailer = answer;
  trailer.erase("answer");
  trailer["type"] = "references";
  lines.push_back(trailer.dump());
  return lines;
}

namespace {

ApiResponse json_response(int status, const json& body) { return {status, "application/json", body.dump(), {}}; }

json parse_body(const std::string& body) {
  if (trim_view(body).empty()) return json::object();
  try {
    json j = json::parse(body);
    if (!j.is_object()) throw Error(ErrorCode::invalid_argument, "request body must be a JSON object");
    return j;
  } catch (const json::exception& e) {
    throw Error(ErrorCode::invalid_argument, fmt::format("malformed JSON body: {}", e.what()));
  }
}

template <typename T>
std::optional<T> optional_field(const json& body, const char* name) {
  if (!body.contains(name) || body[name].is_null()) return std::nullopt;
  try {
    return body[name].get<T>();
  } catch (const json::exception&) {
    throw Error(ErrorCode::invalid_argument, fmt::format("field '{}' has the wrong type", name));
  }
}

std::string required_string(const json& body, const char* name) {
  auto v = optional_field<std::string>(body, name);
  if (!v) throw Error(ErrorCode::invalid_argument, fmt::format("field '{}' is required", name));
  return *v;
}

json kb_json(const KnowledgeBase& kb) {
  return {{"kb_id", kb.kb_id},
          {"name", kb.name},
          {"created_at", kb.created_at},
          {"document_ids", kb.document_ids},
          {"embedding_dimension", kb.embedding_dimension},
          {"vector_manifest", kb.vector_manifest},
          {"graph_manifest", kb.graph_manifest}};
}

json ingest_json(const IngestResult& r) {
  return {{"doc_id", r.doc_id},
          {"chunk_count", r.chunk_count},
          {"triple_count", r.triple_count},
          {"deduplicated", r.deduplicated},
          {"skipped_triple_lines", r.skipped_triple_lines}};
}

std::vector<RetrievalMode> modes_field(const json& body) {
  if (!body.contains("modes")) return {RetrievalMode::vector, RetrievalMode::graph, RetrievalMode::custom};
  const json& m = body["modes"];
  if (m.is_string()) return parse_modes(m.get<std::string>());
  if (!m.is_array()) throw Error(ErrorCode::invalid_argument, "'modes' must be a list or comma-separated string");
  std::vector<std::string> names;
  for (const auto& x : m) {
    if (!x.is_string()) throw Error(ErrorCode::invalid_argument, "'modes' entries must be strings");
    names.push_back(x.get<std::string>());
  }
  return parse_modes(join(names, ","));
}

}  // namespace

Service::Service(Engine& engine, std::size_t workers) : engine_(engine), jobs_(workers) {}

ApiResponse Service::handle(const ApiRequest& req) {
  static const std::regex kb_re("^/kb/([^/]+)$");
  static const std::regex docs_re("^/kb/([^/]+)/documents$");
  static const std::regex chat_re("^/kb/([^/]+)/chat$");
  static const std::regex reports_re("^/kb/([^/]+)/reports$");
  static const std::regex job_re("^/kb/([^/]+)/reports/jobs/([^/]+)$");
  static const std::regex report_re("^/kb/([^/]+)/reports/([^/]+)$");
  static const std::regex eval_re("^/eval/runs/([^/]+)$");

  try {
    const std::string& m = req.method;
    std::smatch g;
    if (req.path == "/health" && m == "GET") return json_response(200, {{"status", "ok"}});
    if (req.path == "/kb") {
      if (m == "POST") return create_kb(parse_body(req.body));
      if (m == "GET") return list_kbs();
    } else if (std::regex_match(req.path, g, kb_re)) {
      if (m == "GET") return get_kb(g[1]);
      if (m == "DELETE") return delete_kb(g[1]);
    } else if (std::regex_match(req.path, g, docs_re)) {
      if (m == "POST") return upload(g[1], req);
    } else if (std::regex_match(req.path, g, chat_re)) {
      if (m == "POST") {
        const json body = parse_body(req.body);
        const auto q = req.query.find("stream");
        const bool stream = optional_field<bool>(body, "stream").value_or(false) ||
                            (q != req.query.end() && (q->second == "1" || q->second == "true"));
        return chat(g[1], body, stream);
      }
    } else if (std::regex_match(req.path, g, reports_re)) {
      if (m == "POST") return start_report(g[1], parse_body(req.body));
      if (m == "GET") return list_reports(g[1]);
    } else if (std::regex_match(req.path, g, job_re)) {
      if (m == "GET") return report_job(g[1], g[2]);
    } else if (std::regex_match(req.path, g, report_re)) {
      if (m == "GET") return download_report(g[1], g[2]);
    } else if (req.path == "/eval/runs") {
      if (m == "POST") return start_eval(parse_body(req.body));
    } else if (std::regex_match(req.path, g, eval_re)) {
      if (m == "GET") return eval_run(g[1]);
    } else {
      return error_response(Error(ErrorCode::not_found, fmt::format("no route for {}", req.path)));
    }
    return error_response(Error(ErrorCode::not_found, fmt::format("{} is not supported on {}", m, req.path)));
  } catch (const Error& e) {
    return error_response(e);
  } catch (const std::exception& e) {
    spdlog::error("{} {} failed: {}", req.method, req.path, e.what());
    return error_response(Error(ErrorCode::internal, e.what()));
  }
}

ApiResponse Service::create_kb(const json& body) {
  return json_response(201, kb_json(engine_.create_kb(required_string(body, "name"))));
}

ApiResponse Service::list_kbs() { return json_response(200, engine_.list_kbs()); }

ApiResponse Service::get_kb(const std::string& id) {
  const auto snap = engine_.open_kb(id)->snapshot();
  json j = kb_json(snap->kb);
  j["documents"] = snap->documents;
  j["reports"] = snap->reports;
  return json_response(200, j);
}

ApiResponse Service::delete_kb(const std::string& id) {
  engine_.delete_kb(id);
  return {204, "application/json", "", {}};
}

ApiResponse Service::upload(const std::string& id, const ApiRequest& req) {
  engine_.registry().resolve(id);
  if (req.files.empty()) throw Error(ErrorCode::invalid_argument, "multipart field 'file' is required");
  json results = json::array();
  for (const auto& f : req.files) {
    if (trim_view(f.filename).empty()) throw Error(ErrorCode::invalid_argument, "uploaded file has no name");
    results.push_back(ingest_json(engine_.ingest_bytes(id, f.content, f.filename)));
  }
  if (results.size() == 1) return json_response(201, results[0]);
  return json_response(201, {{"documents", results}});
}

ApiResponse Service::chat(const std::string& id, const json& body, bool want_stream) {
  const std::string query = required_string(body, "query");
  const auto mode = retrieval_mode_from_string(optional_field<std::string>(body, "mode").value_or("custom"));
  const auto k = optional_field<std::size_t>(body, "k");
  const auto depth = optional_field<int>(body, "depth");
  const auto history = history_from_json(body.value("history", json(nullptr)));
  const auto answer = engine_.chat(id, query, mode, history, k, depth);
  if (!want_stream) return json_response(200, answer);
  ApiResponse r;
  r.content_type = "application/x-ndjson";
  r.stream = chat_stream_lines(answer);
  return r;
}

ApiResponse Service::start_report(const std::string& id, const json& body) {
  ReportJobSpec spec;
  spec.question = required_string(body, "question");
  spec.n_queries = optional_field<int>(body, "n_queries").value_or(spec.n_queries);
  spec.top_m = optional_field<int>(body, "top_m").value_or(spec.top_m);
  spec.source_mode = source_mode_from_string(optional_field<std::string>(body, "source_mode").value_or("web"));
  spec.validate();
  const std::string kb_id = engine_.registry().resolve(id);
  const std::string report_id = make_report_id(kb_id, spec);
  const std::string job_id = fmt::format("job-{:06d}-{}", jobs_.next_seq(), report_id.substr(4, 8));
  auto job = jobs_.add_report(std::make_shared<ReportJob>(job_id, kb_id, spec));
  jobs_.pool().submit([this, job, kb_id, spec] {
    try {
      engine_.run_report(kb_id, spec, job.get());
    } catch (const Error& e) {
      job->fail(e);
      spdlog::warn("report job {} failed: {}", job->state().job_id, e.what());
    } catch (const std::exception& e) {
      job->fail(Error(ErrorCode::internal, e.what()));
    }
  });
  return json_response(202, {{"job_id", job_id}, {"kb_id", kb_id}, {"report_id", report_id}});
}

ApiResponse Service::report_job(const std::string& id, const std::string& job_id) {
  const std::string kb_id = engine_.registry().resolve(id);
  auto job = jobs_.report(job_id);
  if (!job || job->state().kb_id != kb_id) {
    throw Error(ErrorCode::not_found, fmt::format("report job '{}' not found", job_id));
  }
  return json_response(200, job->state());
}

ApiResponse Service::list_reports(const std::string& id) {
  return json_response(200, engine_.open_kb(id)->snapshot()->reports);
}

ApiResponse Service::download_report(const std::string& id, const std::string& report_id) {
  std::string name = report_id;
  if (name.ends_with(".md")) name.resize(name.size() - 3);
  return {200, "text/markdown; charset=utf-8", engine_.read_report(id, name), {}};
}

ApiResponse Service::start_eval(const json& body) {
  const std::string kb_id = engine_.registry().resolve(required_string(body, "kb_id"));
  std::vector<EvalQuery> dataset;
  if (body.contains("queries")) {
    if (!body["queries"].is_array()) throw Error(ErrorCode::invalid_argument, "'queries' must be a list");
    std::string jsonl;
    for (const auto& q : body["queries"]) jsonl += q.dump() + "\n";
    dataset = parse_dataset(jsonl);
  } else if (auto per_cell = optional_field<std::size_t>(body, "synthetic_per_cell")) {
    dataset = synthetic_dataset(*per_cell, optional_field<std::uint64_t>(body, "seed").value_or(2024));
  } else if (auto path = optional_field<std::string>(body, "dataset")) {
    dataset = load_dataset(*path, optional_field<std::string>(body, "manifest"));
  } else {
    throw Error(ErrorCode::invalid_argument, "one of 'dataset' (a server-side path), 'queries' or 'synthetic_per_cell' is required");
  }
  if (dataset.empty()) throw Error(ErrorCode::invalid_argument, "dataset is empty");
  const auto modes = modes_field(body);
  const auto relevance = relevance_mode_from_string(optional_field<std::string>(body, "relevance").value_or("concepts"));

  EvalRunState st;
  st.kb_id = kb_id;
  st.modes = modes;
  st.total = dataset.size() * modes.size();
  const std::string run_id = jobs_.add_eval(st);
  jobs_.pool().submit([this, run_id, kb_id, dataset, modes, relevance] {
    jobs_.update_eval(run_id, [](EvalRunState& s) { s.status = RunStatus::running; });
    try {
      auto result = engine_.run_eval(kb_id, dataset, modes, relevance, {}, [&](std::size_t done, std::size_t) {
        jobs_.update_eval(run_id, [done](EvalRunState& s) { s.done = done; });
      });
      jobs_.update_eval(run_id, [&](EvalRunState& s) {
        s.result = std::move(result);
        s.status = RunStatus::done;
      });
    } catch (const Error& e) {
      jobs_.update_eval(run_id, [&](EvalRunState& s) {
        s.status = RunStatus::failed;
        s.error_code = std::string(api_code(e.code()));
        s.error_message = e.what();
      });
    }
  });
  return json_response(202, {{"run_id", run_id}, {"total", st.total}});
}

ApiResponse Service::eval_run(const std::string& run_id) {
  const auto st = jobs_.eval(run_id);
  if (!st) throw Error(ErrorCode::not_found, fmt::format("eval run '{}' not found", run_id));
  json modes = json::array();
  for (auto m : st->modes) modes.push_back(to_string(m));
  json j = {{"run_id", st->run_id}, {"kb_id", st->kb_id}, {"status", to_string(st->status)},
            {"modes", modes},       {"total", st->total}, {"done", st->done}};
  if (st->error_code) j["error"] = {{"code", *st->error_code}, {"message", st->error_message.value_or("")}};
  if (st->result) j.update(eval_bundle(*st->result));
  return json_response(200, j);
}

}  // namespace sagekb
