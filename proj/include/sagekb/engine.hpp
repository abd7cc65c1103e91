#pragma once

#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "sagekb/eval.hpp"
#include "sagekb/ingestion.hpp"
#include "sagekb/prompts.hpp"
#include "sagekb/providers.hpp"
#include "sagekb/rag.hpp"
#include "sagekb/report.hpp"
#include "sagekb/store.hpp"

namespace sagekb {

struct EngineConfig {
  std::filesystem::path root;
  /// JSON provider config; ignored in mock mode.
  std::optional<std::string> config_path;
  bool mock = false;
  std::string fixtures_dir = "fixtures";
  std::optional<std::string> prompts_dir;
  RagOptions rag;
  IngestOptions ingest;
  ReportOptions report;

  /// root from $SAGEKB_ROOT, config_path from $SAGEKB_CONFIG.
  static EngineConfig from_env();
};

/// Extension-based media detection for uploads (mp3, wav, mp4, ...).
std::optional<MediaType> media_type_from_path(std::string_view path);

/// Everything the CLI, the HTTP service and the Python module share: the
/// registry, the providers and the engine components built over them.
class Engine {
 public:
  explicit Engine(EngineConfig config);
  Engine(EngineConfig config, ProviderSet providers);

  Registry& registry() { return *registry_; }
  const ProviderSet& providers() const { return providers_; }
  const PromptLibrary& prompts() const { return prompts_; }
  const EngineConfig& config() const { return config_; }

  KnowledgeBase create_kb(const std::string& name);
  std::vector<KbSummary> list_kbs() const;
  void delete_kb(const std::string& id_or_name);
  std::shared_ptr<KbStore> open_kb(const std::string& id_or_name);

  /// Documents by extension, audio/video through the transcriber.
  IngestResult ingest_bytes(const std::string& kb, std::string bytes, const std::string& filename);
  std::vector<IngestResult> ingest_paths(const std::string& kb, const std::vector<std::string>& paths);

  AnswerWithReferences chat(const std::string& kb, std::string_view query, RetrievalMode mode,
                            const std::vector<ChatMessage>& history = {},
                            std::optional<std::size_t> k = std::nullopt,
                            std::optional<int> depth = std::nullopt) const;

  ReportOutcome run_report(const std::string& kb, const ReportJobSpec& spec, ReportJob* job = nullptr);
  std::string read_report(const std::string& kb, const std::string& report_id);

  SuiteResult run_eval(const std::string& kb, const std::vector<EvalQuery>& dataset,
                       const std::vector<RetrievalMode>& modes, RelevanceMode relevance = RelevanceMode::concepts,
                       const SuiteOptions& options = {},
                       const std::function<void(std::size_t, std::size_t)>& progress = {});

  const RagEngine& rag() const { return *rag_; }
  const Ingestor& ingestor() const { return *ingestor_; }
  const ReportGenerator& reports() const { return *reports_; }

 private:
  void build();

  EngineConfig config_;
  ProviderSet providers_;
  PromptLibrary prompts_;
  std::unique_ptr<Registry> registry_;
  std::unique_ptr<RagEngine> rag_;
  std::unique_ptr<Ingestor> ingestor_;
  std::unique_ptr<ReportGenerator> reports_;
};

/// Reads optional "engine" settings (k, depth, chunk sizes, prompts dir)
/// from a JSON config file into `config`.
void apply_engine_settings(const std::string& config_path, EngineConfig& config);

}  // namespace sagekb
