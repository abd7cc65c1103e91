#pragma once

#include <cstddef>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "sagekb/prompts.hpp"
#include "sagekb/providers.hpp"
#include "sagekb/rag.hpp"
#include "sagekb/store.hpp"

namespace sagekb {

enum class Difficulty { easy, medium, hard };
enum class Occurrence { low, medium, high };

inline constexpr Difficulty kDifficulties[] = {Difficulty::easy, Difficulty::medium, Difficulty::hard};
inline constexpr Occurrence kOccurrences[] = {Occurrence::low, Occurrence::medium, Occurrence::high};

std::string_view to_string(Difficulty d);
std::string_view to_string(Occurrence o);
Difficulty difficulty_from_string(std::string_view s);
Occurrence occurrence_from_string(std::string_view s);

struct EvalQuery {
  std::string id;
  std::string text;
  Difficulty difficulty = Difficulty::easy;
  Occurrence occurrence = Occurrence::low;
  std::optional<std::string> reference_answer;
};

// ---------------------------------------------------------------------------
// Dataset
// ---------------------------------------------------------------------------

/// Declared query counts per (occurrence, difficulty) cell.
struct DatasetManifest {
  std::map<std::pair<Occurrence, Difficulty>, std::size_t> cells;
  std::optional<std::size_t> total;
};

/// Parses line-delimited JSON {id?, text, difficulty, occurrence,
/// reference_answer?}. Schema violations throw invalid_argument naming the line.
std::vector<EvalQuery> parse_dataset(std::string_view jsonl);
DatasetManifest parse_manifest(const nlohmann::json& j);
nlohmann::json manifest_to_json(const DatasetManifest& m);

/// Throws invalid_argument when any declared cell count (or the total)
/// differs from the dataset.
void validate_counts(const std::vector<EvalQuery>& queries, const DatasetManifest& manifest);

/// Loads `path`; validates against `manifest_path`, or against
/// `<stem>.manifest.json` next to the file when that exists.
std::vector<EvalQuery> load_dataset(const std::string& path,
                                    const std::optional<std::string>& manifest_path = std::nullopt);

std::string dataset_to_jsonl(const std::vector<EvalQuery>& queries);

/// Synthetic dataset: per_cell queries for each of
/// the 3 x 3 (occurrence, difficulty) cells. Deterministic for a seed.
std::vector<EvalQuery> synthetic_dataset(std::size_t per_cell = 255, std::uint64_t seed = 2024);
DatasetManifest manifest_for(const std::vector<EvalQuery>& queries);

// ---------------------------------------------------------------------------
// Metrics
// ---------------------------------------------------------------------------

struct Statement {
  std::string text;
  std::optional<bool> verified;
};

/// First non-blank line must be a decimal number in [1, 5].
/// parse_failure when it is not a number, out_of_range when outside.
double parse_correctness(std::string_view judge_output);

/// Leading YES/NO token (case-insensitive); parse_failure otherwise.
bool parse_verdict(std::string_view judge_output);

/// |V| / |S|. zero_statements for an empty list, unset_verdict when any
/// statement has not been verified.
double score_faithfulness(std::span<const Statement> statements);

/// Relevant concepts / total concepts. zero_concepts for an empty list.
double concept_ratio(const std::vector<bool>& relevant);

enum class RelevanceMode { concepts, binary };

std::string_view to_string(RelevanceMode m);
RelevanceMode relevance_mode_from_string(std::string_view s);

struct FaithfulnessResult {
  std::vector<Statement> statements;
  double score = 0.0;
};

struct RelevanceResult {
  std::vector<std::string> concepts;
  std::vector<bool> relevant;
  double score = 0.0;
};

/// LLM-as-judge metrics. All calls go to one judge provider.
class Judge {
 public:
  Judge(ChatProvider& judge, PromptLibrary prompts, RelevanceMode relevance = RelevanceMode::concepts);

  double score_correctness(const std::string& query, const std::string& generated,
                           const std::string& reference) const;
  std::vector<Statement> decompose_statements(const std::string& answer) const;
  bool verify_statement(const std::string& statement, const std::string& context) const;
  /// Decomposes and verifies. With an empty context nothing can be inferred,
  /// so every statement is unverified and no verification call is made.
  FaithfulnessResult faithfulness(const std::string& answer, const std::string& context) const;
  RelevanceResult relevance(const std::string& answer, const std::string& query) const;

  RelevanceMode relevance_mode() const { return relevance_; }

 private:
  std::string ask(std::string_view prompt_name, const std::map<std::string, std::string>& vars) const;

  ChatProvider& judge_;
  PromptLibrary prompts_;
  RelevanceMode relevance_;
};

/// Context text c(q) as shown to the verifier.
std::string context_text(const ContextBundle& bundle);

// ---------------------------------------------------------------------------
// Suite
// ---------------------------------------------------------------------------

struct EvalRecord {
  EvalQuery query;
  RetrievalMode mode = RetrievalMode::custom;
  std::string answer;
  std::string context_digest;
  std::optional<double> correctness;  // absent without a reference answer
  std::optional<double> relevance;
  std::optional<double> faithfulness;
  std::size_t statement_total = 0;
  std::size_t statement_verified = 0;
  std::size_t concept_total = 0;
  std::size_t concept_relevant = 0;
  std::optional<std::string> error;  // "<api code>: <message>" for failed records
  std::optional<std::string> error_stage;

  bool failed() const { return error.has_value(); }
};

struct SuiteOptions {
  std::size_t parallelism = 4;
  double max_failure_rate = 0.25;
  std::optional<std::size_t> k;
  std::optional<int> depth;
};

struct SuiteResult {
  std::vector<EvalRecord> records;  // |dataset| x |modes|, query-major
  std::size_t failed = 0;
  bool threshold_exceeded = false;
};

/// Answers every query in every mode and scores it. Per-record failures
/// are marked, not fatal.
SuiteResult run_suite(const RagEngine& rag, const KbSnapshot& kb, const Judge& judge,
                      const std::vector<EvalQuery>& dataset, const std::vector<RetrievalMode>& modes,
                      const SuiteOptions& options = {},
                      const std::function<void(std::size_t done, std::size_t total)>& progress = {});

// ---------------------------------------------------------------------------
// Aggregation and export
// ---------------------------------------------------------------------------

enum class GroupBy { difficulty, occurrence, difficulty_occurrence, all };

std::string_view to_string(GroupBy g);

inline constexpr std::string_view kMetrics[] = {"correctness", "relevance", "faithfulness"};

struct AggregateCell {
  std::string difficulty;  // or "all"
  std::string occurrence;  // or "all"
  RetrievalMode mode = RetrievalMode::custom;
  std::string metric;
  double mean = 0.0;
  double stddev = 0.0;  // population
  std::size_t n = 0;
};

/// Mean and population standard deviation per (group, mode, metric).
/// Failed records and absent metrics are skipped; empty groups are omitted.
/// Values are summed in sorted order, so the result does not depend on
/// record order.
std::vector<AggregateCell> aggregate(const std::vector<EvalRecord>& records, GroupBy group_by);

/// Sorted-order mean and population stddev of `values`.
std::pair<double, double> mean_and_stddev(std::vector<double> values);

std::string records_csv(const std::vector<EvalRecord>& records);
std::string aggregates_csv(const std::vector<AggregateCell>& cells, GroupBy group_by);
nlohmann::json eval_bundle(const SuiteResult& result);

/// Grouped bar chart (one bar per mode, error bars at one stddev) for one
/// metric, as standalone SVG.
std::string bar_chart_svg(const std::vector<AggregateCell>& cells, std::string_view metric,
                          std::string_view title);

/// Writes records.csv, aggregates.csv, bundle.json and one SVG per metric
/// into `dir`.
void write_eval_outputs(const SuiteResult& result, const std::string& dir);
/// Renders the plots from an existing bundle.json.
void write_plots_from_bundle(const nlohmann::json& bundle, const std::string& dir);

void to_json(nlohmann::json& j, const EvalQuery& q);
void to_json(nlohmann::json& j, const EvalRecord& r);
void from_json(const nlohmann::json& j, EvalRecord& r);
void to_json(nlohmann::json& j, const AggregateCell& c);
void from_json(const nlohmann::json& j, AggregateCell& c);

}  // namespace sagekb
