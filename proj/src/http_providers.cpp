#include "sagekb/http_providers.hpp"

#include <httplib.h>

#include <algorithm>
#include <regex>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "sagekb/html.hpp"
#include "sagekb/util.hpp"

namespace sagekb {

using json = nlohmann::json;

SplitUrl split_url(const std::string& url) {
  validate_absolute_url(url);
  const auto scheme_end = url.find("://");
  const auto path_start = url.find('/', scheme_end + 3);
  if (path_start == std::string::npos) return {url, "/"};
  return {url.substr(0, path_start), url.substr(path_start)};
}

namespace {

std::unique_ptr<httplib::Client> make_client(const std::string& origin,
                                             const ProviderConfig& cfg) {
  auto cli = std::make_unique<httplib::Client>(origin);
  const auto timeout = std::chrono::duration_cast<std::chrono::microseconds>(
      std::chrono::duration<double>(cfg.timeout_seconds));
  cli->set_connection_timeout(timeout);
  cli->set_read_timeout(timeout);
  cli->set_write_timeout(timeout);
  cli->set_follow_location(true);
  return cli;
}

httplib::Headers auth_headers(const ProviderConfig& cfg) {
  httplib::Headers headers{{"User-Agent", "sagekb/0.1"}};
  if (const std::string key = cfg.api_key(); !key.empty()) {
    headers.emplace("Authorization", "Bearer " + key);
  }
  return headers;
}

[[noreturn]] void throw_transport(httplib::Error err, const std::string& what) {
  if (err == httplib::Error::ConnectionTimeout || err == httplib::Error::Read) {
    throw Error(ErrorCode::provider_timeout,
                fmt::format("{}: {}", what, httplib::to_string(err)));
  }
  throw Error(ErrorCode::provider_transport, fmt::format("{}: {}", what, httplib::to_string(err)));
}

std::string join_path(const std::string& base, const std::string& suffix) {
  std::string out = base;
  if (!out.empty() && out.back() == '/') out.pop_back();
  return out + suffix;
}

std::string error_message(const std::string& body) {
  try {
    const auto j = json::parse(body);
    if (j.contains("error")) {
      const auto& e = j["error"];
      if (e.is_object()) return e.value("message", body);
      if (e.is_string()) return e.get<std::string>();
    }
  } catch (const json::exception&) {
  }
  return body.substr(0, 200);
}

bool is_content_filter(const std::string& body) {
  try {
    const auto j = json::parse(body);
    if (j.contains("error") && j["error"].is_object()) {
      return j["error"].value("code", "") == "content_filter";
    }
  } catch (const json::exception&) {
  }
  return false;
}

}  // namespace

HttpTransport::HttpTransport(ProviderConfig config)
    : config_(std::move(config)),
      limiter_(std::make_shared<RateLimiter>(config_.rate_limit_per_sec,
                                             std::max(1.0, config_.rate_limit_per_sec))) {
  config_.validate();
  if (!config_.endpoint.empty()) base_ = split_url(config_.endpoint);
}

template <typename F>
HttpTransport::Response HttpTransport::send(F&& fn) const {
  return call_with_retries(config_.retry, [&]() -> Response {
    limiter_->acquire();
    Response r = fn();
    if (r.status == 429 || r.status >= 500) {
      throw Error(ErrorCode::provider_transport,
                  fmt::format("HTTP {}: {}", r.status, error_message(r.body)));
    }
    return r;
  });
}

HttpTransport::Response HttpTransport::post_json(const std::string& path,
                                                 const std::string& body) const {
  if (base_.origin.empty()) throw Error(ErrorCode::unsupported, "provider endpoint not configured");
  return send([&]() -> Response {
    auto cli = make_client(base_.origin, config_);
    auto res = cli->Post(join_path(base_.path, path), auth_headers(config_), body,
                         "application/json");
    if (!res) throw_transport(res.error(), "POST " + config_.endpoint + path);
    return {res->status, res->get_header_value("Content-Type"), res->body};
  });
}

HttpTransport::Response HttpTransport::post_multipart(const std::string& path,
                                                      const std::string& field_name,
                                                      const std::string& filename,
                                                      const std::string& data,
                                                      const std::string& content_type,
                                                      const std::string& model) const {
  if (base_.origin.empty()) throw Error(ErrorCode::unsupported, "provider endpoint not configured");
  return send([&]() -> Response {
    auto cli = make_client(base_.origin, config_);
    httplib::MultipartFormDataItems items = {
        {field_name, data, filename, content_type},
        {"model", model, "", ""},
    };
    auto res = cli->Post(join_path(base_.path, path), auth_headers(config_), items);
    if (!res) throw_transport(res.error(), "POST " + config_.endpoint + path);
    return {res->status, res->get_header_value("Content-Type"), res->body};
  });
}

HttpTransport::Response HttpTransport::get(const std::string& url_or_path) const {
  return send([&]() -> Response {
    SplitUrl target = url_or_path.find("://") != std::string::npos
                          ? split_url(url_or_path)
                          : SplitUrl{base_.origin, join_path(base_.path, url_or_path)};
    auto cli = make_client(target.origin, config_);
    auto res = cli->Get(target.path, auth_headers(config_));
    if (!res) throw_transport(res.error(), "GET " + url_or_path);
    return {res->status, res->get_header_value("Content-Type"), res->body};
  });
}

ChatResponse OpenAiChat::do_complete(const ChatRequest& req) {
  json messages = json::array();
  for (const auto& m : req.messages) {
    messages.push_back({{"role", to_string(m.role)}, {"content", m.content}});
  }
  const std::string model = req.model_id.empty() ? http_.config().model : req.model_id;
  const json body = {{"model", model},
                     {"messages", messages},
                     {"temperature", req.temperature},
                     {"max_tokens", req.max_tokens}};
  const auto r = http_.post_json("/chat/completions", body.dump());
  if (r.status != 200) {
    if (is_content_filter(r.body)) {
      throw Error(ErrorCode::provider_refusal, "request blocked by provider content filter");
    }
    throw Error(ErrorCode::provider_http,
                fmt::format("chat completion failed with HTTP {}: {}", r.status, error_message(r.body)));
  }
  try {
    const auto j = json::parse(r.body);
    const auto& choice = j.at("choices").at(0);
    if (choice.value("finish_reason", "") == "content_filter") {
      throw Error(ErrorCode::provider_refusal, "response blocked by provider content filter");
    }
    const auto& msg = choice.at("message");
    if ((!msg.contains("content") || msg["content"].is_null()) && msg.contains("refusal") &&
        msg["refusal"].is_string()) {
      throw Error(ErrorCode::provider_refusal, msg["refusal"].get<std::string>());
    }
    ChatResponse out;
    out.text = msg.at("content").get<std::string>();
    if (j.contains("usage")) {
      out.usage.prompt_tokens = j["usage"].value("prompt_tokens", 0);
      out.usage.completion_tokens = j["usage"].value("completion_tokens", 0);
    }
    return out;
  } catch (const json::exception& e) {
    throw Error(ErrorCode::provider_bad_response,
                fmt::format("malformed chat completion response: {}", e.what()));
  }
}

OpenAiEmbedder::OpenAiEmbedder(ProviderConfig config)
    : http_(config), dimension_(config.embedding_dimension) {
  if (dimension_ == 0) {
    throw Error(ErrorCode::invalid_argument, "embedding provider needs a dimension > 0");
  }
}

std::vector<Embedding> OpenAiEmbedder::do_embed(const std::vector<std::string>& texts) {
  const json body = {{"model", http_.config().model}, {"input", texts}};
  const auto r = http_.post_json("/embeddings", body.dump());
  if (r.status != 200) {
    throw Error(ErrorCode::provider_http,
                fmt::format("embedding failed with HTTP {}: {}", r.status, error_message(r.body)));
  }
  try {
    const auto j = json::parse(r.body);
    std::vector<std::pair<int, Embedding>> rows;
    for (const auto& d : j.at("data")) {
      rows.emplace_back(d.value("index", static_cast<int>(rows.size())),
                        d.at("embedding").get<Embedding>());
    }
    std::sort(rows.begin(), rows.end(),
              [](const auto& a, const auto& b) { return a.first < b.first; });
    std::vector<Embedding> out;
    out.reserve(rows.size());
    for (auto& [_, v] : rows) out.push_back(std::move(v));
    return out;
  } catch (const json::exception& e) {
    throw Error(ErrorCode::provider_bad_response,
                fmt::format("malformed embedding response: {}", e.what()));
  }
}

std::string OpenAiTranscriber::do_transcribe(std::string_view media, MediaType type) {
  const bool audio = type == MediaType::audio;
  const auto r = http_.post_multipart("/audio/transcriptions", "file",
                                      audio ? "media.mp3" : "media.mp4", std::string(media),
                                      audio ? "audio/mpeg" : "video/mp4", http_.config().model);
  if (r.status != 200) {
    throw Error(ErrorCode::provider_http,
                fmt::format("transcription failed with HTTP {}: {}", r.status, error_message(r.body)));
  }
  try {
    return json::parse(r.body).at("text").get<std::string>();
  } catch (const json::exception& e) {
    throw Error(ErrorCode::provider_bad_response,
                fmt::format("malformed transcription response: {}", e.what()));
  }
}

namespace {

ProviderConfig with_default_endpoint(ProviderConfig cfg, const char* endpoint) {
  if (cfg.endpoint.empty()) cfg.endpoint = endpoint;
  return cfg;
}

std::string attribute(const std::string& tag, const std::string& name) {
  const std::regex re(name + R"re(\s*=\s*"([^"]*)")re");
  std::smatch m;
  if (std::regex_search(tag, m, re)) return m[1].str();
  return {};
}

std::string resolve_ddg_href(std::string href) {
  href = decode_html_entities(href);
  if (const auto pos = href.find("uddg="); pos != std::string::npos) {
    std::string v = href.substr(pos + 5);
    v = v.substr(0, v.find('&'));
    href = url_decode(v);
  }
  if (href.starts_with("//")) href = "https:" + href;
  return href;
}

std::string element_text(const std::string& html, std::size_t tag_end, std::size_t* end_out) {
  const auto close = html.find("</a>", tag_end);
  const std::size_t stop = close == std::string::npos ? html.size() : close;
  if (end_out) *end_out = stop;
  return html_to_text(html.substr(tag_end + 1, stop - tag_end - 1));
}

std::string xml_child(const std::string& xml, const std::string& tag) {
  const auto open = xml.find("<" + tag);
  if (open == std::string::npos) return {};
  const auto gt = xml.find('>', open);
  const auto close = xml.find("</" + tag + ">", gt);
  if (gt == std::string::npos || close == std::string::npos) return {};
  return collapse_whitespace(decode_html_entities(xml.substr(gt + 1, close - gt - 1)));
}

}  // namespace

std::vector<SearchHit> parse_duckduckgo_html(const std::string& html) {
  std::vector<SearchHit> hits;
  std::size_t pos = 0;
  const std::string marker = "class=\"result__a\"";
  const std::string snippet_marker = "class=\"result__snippet\"";
  while ((pos = html.find(marker, pos)) != std::string::npos) {
    const auto tag_start = html.rfind('<', pos);
    const auto tag_end = html.find('>', pos);
    if (tag_start == std::string::npos || tag_end == std::string::npos) break;
    SearchHit hit;
    hit.url = resolve_ddg_href(attribute(html.substr(tag_start, tag_end - tag_start), "href"));
    std::size_t after = tag_end;
    hit.title = element_text(html, tag_end, &after);
    const auto next = html.find(marker, after);
    const auto snip = html.find(snippet_marker, after);
    if (snip != std::string::npos && (next == std::string::npos || snip < next)) {
      const auto snip_end = html.find('>', snip);
      if (snip_end != std::string::npos) hit.snippet = element_text(html, snip_end, nullptr);
    }
    if (hit.url.starts_with("http")) hits.push_back(std::move(hit));
    pos = after;
  }
  return hits;
}

DuckDuckGoSearch::DuckDuckGoSearch(ProviderConfig config)
    : http_(with_default_endpoint(std::move(config), "https://html.duckduckgo.com/html/")) {}

std::vector<SearchHit> DuckDuckGoSearch::do_search(const std::string& query, int) {
  const auto r = http_.get(http_.config().endpoint + "?q=" + url_encode(query));
  if (r.status != 200) {
    throw Error(ErrorCode::provider_http, fmt::format("web search returned HTTP {}", r.status));
  }
  return parse_duckduckgo_html(r.body);
}

std::vector<ArxivEntry> parse_arxiv_atom(const std::string& xml) {
  std::vector<ArxivEntry> out;
  std::size_t pos = 0;
  while ((pos = xml.find("<entry>", pos)) != std::string::npos) {
    const auto end = xml.find("</entry>", pos);
    if (end == std::string::npos) break;
    const std::string entry = xml.substr(pos, end - pos);
    ArxivEntry e;
    const std::string id_url = xml_child(entry, "id");
    const auto abs = id_url.find("/abs/");
    e.id = abs == std::string::npos ? id_url : id_url.substr(abs + 5);
    e.title = xml_child(entry, "title");
    e.abstract = xml_child(entry, "summary");
    e.url = "https://arxiv.org/abs/" + e.id;
    if (!e.id.empty()) out.push_back(std::move(e));
    pos = end;
  }
  return out;
}

ArxivApiSearch::ArxivApiSearch(ProviderConfig config)
    : http_(with_default_endpoint(std::move(config), "http://export.arxiv.org/api/query")) {}

std::vector<ArxivEntry> ArxivApiSearch::do_search(const std::string& query, int top_n) {
  const auto r = http_.get(fmt::format("{}?search_query=all:{}&start=0&max_results={}",
                                       http_.config().endpoint, url_encode(query), top_n));
  if (r.status != 200) {
    throw Error(ErrorCode::provider_http, fmt::format("arXiv search returned HTTP {}", r.status));
  }
  return parse_arxiv_atom(r.body);
}

HttpFetcher::HttpFetcher(ProviderConfig config, std::size_t max_chars)
    : Fetcher(max_chars), config_(std::move(config)) {
  config_.validate();
}

RawPage HttpFetcher::do_fetch(const std::string& url) {
  return call_with_retries(config_.retry, [&]() -> RawPage {
    const SplitUrl target = split_url(url);
    auto cli = make_client(target.origin, config_);
    auto res = cli->Get(target.path, httplib::Headers{{"User-Agent", "sagekb/0.1"}});
    if (!res) throw_transport(res.error(), "GET " + url);
    if (res->status >= 500) {
      throw Error(ErrorCode::provider_transport, fmt::format("GET {} returned HTTP {}", url, res->status));
    }
    return RawPage{res->status, res->get_header_value("Content-Type"), res->body};
  });
}

}  // namespace sagekb
