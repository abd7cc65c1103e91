#include <filesystem>
#include <fstream>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "sagekb/http_providers.hpp"
#include "sagekb/mock_providers.hpp"
#include "sagekb/providers.hpp"

namespace sagekb {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

json read_json_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::not_found, fmt::format("cannot open {}", path.string()));
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::invalid_argument,
                fmt::format("{} is not valid JSON: {}", path.string(), e.what()));
  }
}

ProviderConfig provider_config_from_json(const json& j) {
  ProviderConfig c;
  c.endpoint = j.value("endpoint", "");
  c.api_key_env = j.value("api_key_env", "");
  c.model = j.value("model", "");
  c.timeout_seconds = j.value("timeout_seconds", 60.0);
  c.retry.max_retries = j.value("retries", 2);
  c.retry.backoff_base = std::chrono::milliseconds(j.value("backoff_ms", 200));
  c.embedding_dimension = j.value("dimension", 0u);
  c.rate_limit_per_sec = j.value("rate_limit_per_sec", 0.0);
  c.validate();
  return c;
}

}  // namespace

ProviderSet load_provider_config(const std::string& path) {
  const json cfg = read_json_file(path);
  ProviderSet set;
  if (cfg.contains("chat")) set.chat = std::make_shared<OpenAiChat>(provider_config_from_json(cfg["chat"]));
  if (cfg.contains("judge")) set.judge = std::make_shared<OpenAiChat>(provider_config_from_json(cfg["judge"]));
  if (cfg.contains("embedding")) {
    set.embedder = std::make_shared<OpenAiEmbedder>(provider_config_from_json(cfg["embedding"]));
  }
  set.web_search = std::make_shared<DuckDuckGoSearch>(
      provider_config_from_json(cfg.value("search", json::object())));
  set.arxiv = std::make_shared<ArxivApiSearch>(
      provider_config_from_json(cfg.value("arxiv", json::object())));
  const json fetch = cfg.value("fetch", json::object());
  set.fetcher = std::make_shared<HttpFetcher>(provider_config_from_json(fetch),
                                              fetch.value("max_chars", kDefaultMaxPageChars));
  if (cfg.contains("transcription")) {
    set.transcriber =
        std::make_shared<OpenAiTranscriber>(provider_config_from_json(cfg["transcription"]));
  }
  return set;
}

ProviderSet load_mock_providers(const std::string& fixtures_dir, std::uint32_t embedding_dimension) {
  const fs::path dir(fixtures_dir);
  auto optional_json = [&](const char* name) -> std::optional<json> {
    const fs::path p = dir / name;
    if (!fs::exists(p)) return std::nullopt;
    return read_json_file(p);
  };

  ProviderSet set;
  const auto chat = optional_json("chat.json");
  if (chat) {
    set.chat = ScriptedChat::from_json(*chat);
  } else {
    set.chat = std::make_shared<HeuristicChat>();
  }
  if (const auto judge = optional_json("judge.json")) set.judge = ScriptedChat::from_json(*judge);

  auto mode = HashEmbedder::Mode::whole_text;
  if (const auto emb = optional_json("embedding.json")) {
    embedding_dimension = emb->value("dimension", embedding_dimension);
    if (emb->value("mode", "whole_text") == "bag_of_words") mode = HashEmbedder::Mode::bag_of_words;
  }
  set.embedder = std::make_shared<HashEmbedder>(embedding_dimension, mode);

  const auto search = optional_json("search.json");
  set.web_search = search ? FixtureSearch::from_json(*search) : std::make_shared<FixtureSearch>();
  const auto arxiv = optional_json("arxiv.json");
  set.arxiv = arxiv ? FixtureArxiv::from_json(*arxiv)
                    : std::make_shared<FixtureArxiv>(std::vector<ArxivEntry>{});
  const auto pages = optional_json("pages.json");
  set.fetcher = pages ? FixtureFetcher::from_json(*pages) : std::make_shared<FixtureFetcher>();
  if (const auto tr = optional_json("transcripts.json")) {
    set.transcriber = std::make_shared<FixedTranscriber>(tr->at("transcript").get<std::string>());
  }
  return set;
}

}  // namespace sagekb
