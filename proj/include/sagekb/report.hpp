#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "sagekb/ingestion.hpp"
#include "sagekb/model.hpp"
#include "sagekb/prompts.hpp"
#include "sagekb/providers.hpp"
#include "sagekb/store.hpp"
#include "sagekb/util.hpp"

namespace sagekb {

enum class SourceMode { web, arxiv };

std::string_view to_string(SourceMode mode);
SourceMode source_mode_from_string(std::string_view s);

enum class JobStatus { pending, searching, scraping, summarizing, composing, done, failed };

std::string_view to_string(JobStatus s);

struct ReportJobSpec {
  std::string question;
  int n_queries = 3;
  int top_m = 5;
  SourceMode source_mode = SourceMode::web;

  void validate() const;
};

struct ProgressEvent {
  JobStatus stage = JobStatus::pending;
  std::string detail;
  std::string timestamp;
};

/// One gathered source. For arXiv sources `text` is the abstract.
struct SourceRef {
  std::string url_or_id;
  std::string title;
  int rank = 0;
  std::string text;
};

struct SourceSummary {
  std::string url_or_id;
  std::string title;
  std::string summary;
  std::size_t fetched_chars = 0;
};

struct ReportJobState {
  std::string job_id;
  std::string kb_id;
  ReportJobSpec spec;
  JobStatus status = JobStatus::pending;
  std::optional<JobStatus> failed_stage;
  std::vector<ProgressEvent> events;
  std::optional<std::string> report_id;
  std::optional<std::string> error_code;  // published API code
  std::optional<std::string> error_message;
};

/// Observable job state. Status only moves forward through the pipeline
/// order; pollers read consistent copies.
class ReportJob {
 public:
  ReportJob(std::string job_id, std::string kb_id, ReportJobSpec spec, Clock clock = system_clock());

  void advance(JobStatus next, std::string detail = {});
  void log(std::string detail);
  void finish(std::string report_id);
  void fail(const Error& e);

  ReportJobState state() const;
  JobStatus status() const;

 private:
  mutable std::mutex mu_;
  ReportJobState state_;
  Clock clock_;
};

struct ReportOptions {
  std::size_t parallelism = 4;
  std::size_t summary_max_words = 200;
  std::size_t summary_max_chars = 2000;
};

struct ReportOutcome {
  std::string report_id;
  std::string markdown;
  std::string doc_id;
  ResearchReport report;
  std::vector<SourceSummary> summaries;
};

/// decompose → search → scrape → summarize → compose → save.
class ReportGenerator {
 public:
  ReportGenerator(ProviderSet providers, PromptLibrary prompts, ReportOptions options = {},
                  IngestOptions ingest = {}, Clock clock = system_clock());

  /// Exactly n distinct sub-queries. Duplicates are dropped and the original
  /// question backfills the list.
  std::vector<std::string> decompose_question(const std::string& question, int n_queries) const;

  /// Hits merged across sub-queries, deduplicated by URL and ordered by best
  /// rank then first appearance, truncated to top_m. Individual search
  /// failures are logged; sources_unavailable when every search fails.
  std::vector<SourceRef> gather_sources(const std::vector<std::string>& sub_queries, int top_m,
                                        SourceMode mode, ReportJob* job = nullptr) const;

  SourceSummary summarize_source(const SourceRef& source, const std::string& question) const;

  ResearchReport compose_report(const std::string& question,
                                const std::vector<SourceSummary>& summaries) const;

  /// Runs the whole job and saves the report into `kb` both as a markdown
  /// file and as an ingested media_kind=report document, in one commit.
  /// On failure the job records the failing stage and the KB is untouched.
  ReportOutcome run(KbStore& kb, const ReportJobSpec& spec, ReportJob* job = nullptr) const;

 private:
  std::vector<SourceRef> scrape(std::vector<SourceRef> sources, SourceMode mode, ReportJob& job) const;

  ProviderSet providers_;
  PromptLibrary prompts_;
  ReportOptions options_;
  Ingestor ingestor_;
  Clock clock_;
};

/// Deterministic id for a job's parameters, so reruns land on the same report.
std::string make_report_id(const std::string& kb_id, const ReportJobSpec& spec);

/// "# title", "## section"..., "## Conclusion", "## References" numbered.
std::string render_markdown(const ResearchReport& report,
                            const std::vector<SourceSummary>& sources = {});

void to_json(nlohmann::json& j, const ProgressEvent& e);
void to_json(nlohmann::json& j, const ReportJobSpec& s);
void to_json(nlohmann::json& j, const ReportJobState& s);

}  // namespace sagekb
