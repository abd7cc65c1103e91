#include "sagekb/mock_providers.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <random>

#include <fmt/format.h>

#include "sagekb/util.hpp"

namespace sagekb {

std::string flatten_messages(const ChatRequest& req) {
  std::string out;
  for (const auto& m : req.messages) {
    if (!out.empty()) out += "\n\n";
    out += m.content;
  }
  return out;
}

std::shared_ptr<ScriptedChat> ScriptedChat::from_json(const nlohmann::json& j) {
  auto chat = std::make_shared<ScriptedChat>();
  for (const auto& r : j.value("rules", nlohmann::json::array())) {
    Rule rule;
    const auto& c = r.at("contains");
    if (c.is_string()) {
      rule.contains.push_back(c.get<std::string>());
    } else {
      rule.contains = c.get<std::vector<std::string>>();
    }
    rule.response = r.value("response", "");
    if (r.contains("error")) {
      const auto name = r["error"].get<std::string>();
      rule.error = error_code_from_string(name);
      if (!rule.error) throw Error(ErrorCode::invalid_argument, fmt::format("unknown error code '{}' in chat fixture", name));
    }
    chat->rules_.push_back(std::move(rule));
  }
  if (j.value("fallback", "") == "heuristic") chat->fallback_ = std::make_shared<HeuristicChat>();
  if (j.contains("default") && j["default"].is_string()) {
    chat->default_ = j["default"].get<std::string>();
  }
  return chat;
}

ScriptedChat& ScriptedChat::on(std::vector<std::string> contains, std::string response) {
  rules_.push_back({std::move(contains), std::move(response), std::nullopt});
  return *this;
}

ScriptedChat& ScriptedChat::fail_on(std::vector<std::string> contains, ErrorCode code) {
  rules_.push_back({std::move(contains), {}, code});
  return *this;
}

ScriptedChat& ScriptedChat::otherwise(std::string response) {
  default_ = std::move(response);
  return *this;
}

ScriptedChat& ScriptedChat::fallback(std::shared_ptr<ChatProvider> provider) {
  fallback_ = std::move(provider);
  return *this;
}

std::size_t ScriptedChat::call_count() const {
  std::lock_guard lock(mu_);
  return prompts_.size();
}

std::vector<std::string> ScriptedChat::prompts() const {
  std::lock_guard lock(mu_);
  return prompts_;
}

ChatResponse ScriptedChat::do_complete(const ChatRequest& req) {
  const std::string prompt = flatten_messages(req);
  {
    std::lock_guard lock(mu_);
    prompts_.push_back(prompt);
  }
  for (const Rule& rule : rules_) {
    const bool hit = std::all_of(rule.contains.begin(), rule.contains.end(),
                                 [&](const std::string& s) { return prompt.find(s) != std::string::npos; });
    if (!hit) continue;
    if (rule.error) throw Error(*rule.error, "scripted chat failure");
    return {rule.response, {static_cast<int>(prompt.size() / 4), static_cast<int>(rule.response.size() / 4)}};
  }
  if (fallback_) return fallback_->complete(req);
  if (default_) {
    return {*default_, {static_cast<int>(prompt.size() / 4), static_cast<int>(default_->size() / 4)}};
  }
  throw Error(ErrorCode::provider_bad_response, "no scripted response matches the prompt");
}

ChatResponse FunctionChat::do_complete(const ChatRequest& req) {
  return {fn_(flatten_messages(req)), {}};
}

ChatResponse FlakyChat::do_complete(const ChatRequest& req) {
  ++attempts_;
  if (remaining_.fetch_sub(1) > 0) {
    throw Error(code_, "injected provider failure");
  }
  return inner_->complete(req);
}

std::vector<double> seeded_draw(std::uint64_t seed, std::uint32_t dimension) {
  std::mt19937_64 gen(seed);
  std::vector<double> v(dimension);
  for (auto& x : v) {
    const double u = static_cast<double>(gen() >> 11) * 0x1.0p-53;
    x = 2.0 * u - 1.0;
  }
  return v;
}

namespace {

std::vector<std::string> word_tokens(std::string_view text) {
  std::vector<std::string> out;
  std::string cur;
  for (unsigned char c : text) {
    if (std::isalnum(c)) {
      cur.push_back(static_cast<char>(std::tolower(c)));
    } else if (!cur.empty()) {
      out.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

Embedding normalized(const std::vector<double>& v) {
  double sum = 0.0;
  for (double x : v) sum += x * x;
  const double norm = std::sqrt(sum);
  Embedding out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = static_cast<float>(v[i] / norm);
  return out;
}

}  // namespace

std::vector<Embedding> HashEmbedder::do_embed(const std::vector<std::string>& texts) {
  const std::size_t call = calls_.fetch_add(1);
  if (fail_after_ && call >= *fail_after_) {
    throw Error(ErrorCode::provider_transport, "injected embedding outage");
  }
  std::vector<Embedding> out;
  out.reserve(texts.size());
  for (const auto& text : texts) {
    std::vector<double> acc;
    if (mode_ == Mode::bag_of_words) {
      acc.assign(dimension_, 0.0);
      for (const auto& tok : word_tokens(text)) {
        const auto d = seeded_draw(stable_hash64(tok), dimension_);
        for (std::uint32_t i = 0; i < dimension_; ++i) acc[i] += d[i];
      }
    }
    double sum = 0.0;
    for (double x : acc) sum += x * x;
    if (acc.empty() || sum == 0.0) acc = seeded_draw(stable_hash64(text), dimension_);
    out.push_back(normalized(acc));
  }
  return out;
}

namespace {

std::vector<SearchHit> hits_from_json(const nlohmann::json& arr) {
  std::vector<SearchHit> hits;
  for (const auto& h : arr) {
    SearchHit hit;
    hit.url = h.at("url").get<std::string>();
    hit.title = h.value("title", "");
    hit.snippet = h.value("snippet", "");
    hits.push_back(std::move(hit));
  }
  return hits;
}

}  // namespace

std::shared_ptr<FixtureSearch> FixtureSearch::from_json(const nlohmann::json& j) {
  auto s = std::make_shared<FixtureSearch>();
  if (j.contains("queries")) {
    for (const auto& [q, arr] : j["queries"].items()) s->add(q, hits_from_json(arr));
  }
  if (j.contains("default")) s->fallback(hits_from_json(j["default"]));
  for (const auto& q : j.value("failing", std::vector<std::string>{})) s->fail(q);
  if (j.value("fail_all", false)) s->fail_all();
  return s;
}

FixtureSearch& FixtureSearch::add(std::string query, std::vector<SearchHit> hits) {
  by_query_[std::move(query)] = std::move(hits);
  return *this;
}

FixtureSearch& FixtureSearch::fallback(std::vector<SearchHit> hits) {
  fallback_ = std::move(hits);
  return *this;
}

FixtureSearch& FixtureSearch::fail(std::string query) {
  failing_.push_back(std::move(query));
  return *this;
}

FixtureSearch& FixtureSearch::fail_all() {
  fail_all_ = true;
  return *this;
}

std::vector<SearchHit> FixtureSearch::do_search(const std::string& query, int) {
  if (fail_all_ || std::find(failing_.begin(), failing_.end(), query) != failing_.end()) {
    throw Error(ErrorCode::provider_transport, fmt::format("search failed for '{}'", query));
  }
  if (auto it = by_query_.find(query); it != by_query_.end()) return it->second;
  if (fallback_) return *fallback_;
  return {};
}

FixtureArxiv::FixtureArxiv(std::vector<ArxivEntry> entries) : entries_(std::move(entries)) {
  for (auto& e : entries_) {
    if (e.url.empty()) e.url = "https://arxiv.org/abs/" + e.id;
  }
}

std::shared_ptr<FixtureArxiv> FixtureArxiv::from_json(const nlohmann::json& j) {
  std::vector<ArxivEntry> entries;
  for (const auto& e : j.value("entries", nlohmann::json::array())) {
    ArxivEntry entry;
    entry.id = e.at("id").get<std::string>();
    entry.title = e.value("title", "");
    entry.abstract = e.value("abstract", "");
    entry.url = e.value("url", "");
    entries.push_back(std::move(entry));
  }
  return std::make_shared<FixtureArxiv>(std::move(entries));
}

std::vector<ArxivEntry> FixtureArxiv::do_search(const std::string& query, int) {
  std::vector<std::string> words;
  for (auto& w : word_tokens(query)) {
    if (w.size() >= 3) words.push_back(std::move(w));
  }
  std::vector<ArxivEntry> out;
  for (const auto& e : entries_) {
    const std::string hay = to_lower(e.title + " " + e.abstract);
    const bool match = std::any_of(words.begin(), words.end(), [&](const std::string& w) {
      return hay.find(w) != std::string::npos;
    });
    if (match) out.push_back(e);
  }
  return out;
}

std::shared_ptr<FixtureFetcher> FixtureFetcher::from_json(const nlohmann::json& j) {
  auto f = std::make_shared<FixtureFetcher>(j.value("max_chars", kDefaultMaxPageChars));
  if (j.contains("pages")) {
    for (const auto& [url, p] : j["pages"].items()) {
      f->add(url, RawPage{p.value("status", 200), p.value("content_type", "text/html"),
                          p.value("body", "")});
    }
  }
  for (const auto& u : j.value("failing", std::vector<std::string>{})) f->fail(u);
  return f;
}

FixtureFetcher& FixtureFetcher::add(std::string url, RawPage page) {
  pages_[std::move(url)] = std::move(page);
  return *this;
}

FixtureFetcher& FixtureFetcher::add_html(std::string url, std::string html) {
  return add(std::move(url), RawPage{200, "text/html; charset=utf-8", std::move(html)});
}

FixtureFetcher& FixtureFetcher::fail(std::string url) {
  failing_.push_back(std::move(url));
  return *this;
}

RawPage FixtureFetcher::do_fetch(const std::string& url) {
  if (std::find(failing_.begin(), failing_.end(), url) != failing_.end()) {
    throw Error(ErrorCode::provider_transport, fmt::format("fetch failed for {}", url));
  }
  if (auto it = pages_.find(url); it != pages_.end()) return it->second;
  return RawPage{404, "text/html", "<html><body>not found</body></html>"};
}

}  // namespace sagekb
