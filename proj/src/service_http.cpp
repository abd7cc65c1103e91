#include <chrono>
#include <thread>

#include <httplib.h>
#include <spdlog/spdlog.h>

#include "sagekb/error.hpp"
#include "sagekb/service.hpp"

namespace sagekb {

namespace {

ApiRequest to_api_request(const httplib::Request& req) {
  ApiRequest out;
  out.method = req.method;
  out.path = req.path;
  out.content_type = req.get_header_value("Content-Type");
  for (const auto& [k, v] : req.params) out.query[k] = v;
  if (req.is_multipart_form_data()) {
    for (const auto& [field, file] : req.files) {
      if (field == "file" || field == "files" || !file.filename.empty()) {
        out.files.push_back({file.filename, file.content});
      }
    }
  } else {
    out.body = req.body;
  }
  const std::string accept = req.get_header_value("Accept");
  if (accept.find("application/x-ndjson") != std::string::npos && !out.query.count("stream")) {
    out.query["stream"] = "1";
  }
  return out;
}

void write_response(const ApiResponse& r, httplib::Response& res) {
  res.status = r.status;
  if (r.stream.empty()) {
    if (r.status != 204) res.set_content(r.body, r.content_type);
    return;
  }
  auto lines = std::make_shared<std::vector<std::string>>(r.stream);
  res.set_chunked_content_provider(r.content_type, [lines, i = std::size_t{0}](std::size_t,
                                                                                httplib::DataSink& sink) mutable {
    if (i < lines->size()) {
      const std::string line = (*lines)[i++] + "\n";
      return sink.write(line.data(), line.size());
    }
    sink.done();
    return true;
  });
}

}  // namespace

void Service::serve(const std::string& addr) {
  const auto [host, port] = parse_listen_addr(addr);
  auto server = std::make_unique<httplib::Server>();
  auto dispatch = [this](const httplib::Request& req, httplib::Response& res) {
    write_response(handle(to_api_request(req)), res);
  };
  const std::string any = R"(/.*)";
  server->Get(any, dispatch);
  server->Post(any, dispatch);
  server->Delete(any, dispatch);
  server->Put(any, dispatch);
  server->set_payload_max_length(256u << 20);
  server->set_logger([](const httplib::Request& req, const httplib::Response& res) {
    spdlog::info("{} {} -> {}", req.method, req.path, res.status);
  });

  int bound = port;
  if (port == 0) {
    bound = server->bind_to_any_port(host);
  } else if (!server->bind_to_port(host, port)) {
    bound = -1;
  }
  if (bound < 0) throw Error(ErrorCode::storage, fmt::format("cannot bind {}:{}", host, port));
  port_ = bound;
  {
    std::lock_guard lock(server_mu_);
    server_ = server.get();
  }
  listening_ = true;
  spdlog::info("listening on {}:{}", host, bound);
  server->listen_after_bind();
  listening_ = false;
  {
    std::lock_guard lock(server_mu_);
    server_ = nullptr;
  }
  jobs_.pool().drain();
}

void Service::stop() {
  std::lock_guard lock(server_mu_);
  if (server_) static_cast<httplib::Server*>(server_)->stop();
}

bool Service::wait_until_listening(int timeout_ms) const {
  const auto deadline = std::chrono::steady_clock::now() + std::chrono::milliseconds(timeout_ms);
  while (std::chrono::steady_clock::now() < deadline) {
    if (listening_) return true;
    std::this_thread::sleep_for(std::chrono::milliseconds(5));
  }
  return listening_;
}

}  // namespace sagekb
