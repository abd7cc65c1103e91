#include "sagekb/engine.hpp"

#include <cstdlib>
#include <fstream>
#include <sstream>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "sagekb/error.hpp"

namespace sagekb {

namespace fs = std::filesystem;

EngineConfig EngineConfig::from_env() {
  EngineConfig c;
  c.root = Registry::default_root();
  if (const char* cfg = std::getenv("SAGEKB_CONFIG"); cfg && *cfg) c.config_path = cfg;
  return c;
}

std::optional<MediaType> media_type_from_path(std::string_view path) {
  const auto dot = path.rfind('.');
  if (dot == std::string_view::npos) return std::nullopt;
  const std::string ext = to_lower(path.substr(dot + 1));
  for (const char* a : {"mp3", "wav", "m4a", "ogg", "flac", "aac"}) {
    if (ext == a) return MediaType::audio;
  }
  for (const char* v : {"mp4", "mov", "mkv", "webm", "avi"}) {
    if (ext == v) return MediaType::video;
  }
  return std::nullopt;
}

void apply_engine_settings(const std::string& config_path, EngineConfig& config) {
  std::ifstream in(config_path);
  if (!in) throw Error(ErrorCode::not_found, fmt::format("cannot open {}", config_path));
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::invalid_argument, fmt::format("{} is not valid JSON: {}", config_path, e.what()));
  }
  const auto e = j.value("engine", nlohmann::json::object());
  config.rag.k = e.value("k", config.rag.k);
  config.rag.depth = e.value("depth", config.rag.depth);
  config.rag.context_char_budget = e.value("context_char_budget", config.rag.context_char_budget);
  config.ingest.chunking.target_tokens = e.value("chunk_tokens", config.ingest.chunking.target_tokens);
  config.ingest.chunking.overlap_tokens = e.value("chunk_overlap", config.ingest.chunking.overlap_tokens);
  config.ingest.graph.max_triples_per_chunk =
      e.value("max_triples_per_chunk", config.ingest.graph.max_triples_per_chunk);
  config.report.parallelism = e.value("parallelism", config.report.parallelism);
  if (e.contains("prompts_dir")) {
    fs::path p = e["prompts_dir"].get<std::string>();
    if (p.is_relative()) p = fs::path(config_path).parent_path() / p;
    config.prompts_dir = p.string();
  }
  config.ingest.chunking.validate();
}

Engine::Engine(EngineConfig config) : config_(std::move(config)) {
  if (config_.mock) {
    providers_ = load_mock_providers(config_.fixtures_dir);
  } else if (config_.config_path) {
    providers_ = load_provider_config(*config_.config_path);
  } else {
    throw Error(ErrorCode::invalid_argument, "no provider config: pass --config, set SAGEKB_CONFIG, or use --mock");
  }
  build();
}

Engine::Engine(EngineConfig config, ProviderSet providers)
    : config_(std::move(config)), providers_(std::move(providers)) {
  build();
}

void Engine::build() {
  config_.rag.graph = config_.ingest.graph;
  prompts_ = config_.prompts_dir ? PromptLibrary::from_directory(*config_.prompts_dir) : PromptLibrary::defaults();
  registry_ = std::make_unique<Registry>(config_.root);
  rag_ = std::make_unique<RagEngine>(providers_, prompts_, config_.rag);
  ingestor_ = std::make_unique<Ingestor>(providers_, prompts_, config_.ingest);
  reports_ = std::make_unique<ReportGenerator>(providers_, prompts_, config_.report, config_.ingest);
}

KnowledgeBase Engine::create_kb(const std::string& name) { return registry_->create_kb(name); }

std::vector<KbSummary> Engine::list_kbs() const { return registry_->list_kbs(); }

void Engine::delete_kb(const std::string& id_or_name) { registry_->delete_kb(registry_->resolve(id_or_name)); }

std::shared_ptr<KbStore> Engine::open_kb(const std::string& id_or_name) {
  return registry_->open_kb(registry_->resolve(id_or_name));
}

IngestResult Engine::ingest_bytes(const std::string& kb, std::string bytes, const std::string& filename) {
  auto store = open_kb(kb);
  const std::string name = fs::path(filename).filename().string();
  if (const auto media = media_type_from_path(name)) {
    return ingestor_->ingest_media(*store, bytes, *media, name);
  }
  DocumentFormat format;
  try {
    format = format_from_path(name);
  } catch (const Error& e) {
    throw e.with_stage("parse");
  }
  return ingestor_->ingest(*store, {std::move(bytes), format, name, MediaKind::text, {}});
}

std::vector<IngestResult> Engine::ingest_paths(const std::string& kb, const std::vector<std::string>& paths) {
  std::vector<IngestResult> out;
  for (const auto& p : paths) {
    std::ifstream in(p, std::ios::binary);
    if (!in) throw Error(ErrorCode::not_found, fmt::format("cannot read {}", p));
    std::ostringstream ss;
    ss << in.rdbuf();
    out.push_back(ingest_bytes(kb, ss.str(), p));
  }
  return out;
}

AnswerWithReferences Engine::chat(const std::string& kb, std::string_view query, RetrievalMode mode,
                                  const std::vector<ChatMessage>& history, std::optional<std::size_t> k,
                                  std::optional<int> depth) const {
  const auto store = registry_->open_kb(registry_->resolve(kb));
  return rag_->chat(*store->snapshot(), mode, query, history, k, depth);
}

ReportOutcome Engine::run_report(const std::string& kb, const ReportJobSpec& spec, ReportJob* job) {
  auto store = open_kb(kb);
  return reports_->run(*store, spec, job);
}

std::string Engine::read_report(const std::string& kb, const std::string& report_id) {
  return open_kb(kb)->read_report(report_id);
}

SuiteResult Engine::run_eval(const std::string& kb, const std::vector<EvalQuery>& dataset,
                             const std::vector<RetrievalMode>& modes, RelevanceMode relevance,
                             const SuiteOptions& options,
                             const std::function<void(std::size_t, std::size_t)>& progress) {
  const auto store = open_kb(kb);
  Judge judge(providers_.judge_or_chat(), prompts_, relevance);
  return run_suite(*rag_, *store->snapshot(), judge, dataset, modes, options, progress);
}

}  // namespace sagekb
