#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "sagekb/graph_index.hpp"
#include "sagekb/model.hpp"
#include "sagekb/prompts.hpp"
#include "sagekb/providers.hpp"
#include "sagekb/store.hpp"

namespace sagekb {

enum class RetrievalMode { vector, graph, custom };

std::string_view to_string(RetrievalMode mode);
RetrievalMode retrieval_mode_from_string(std::string_view s);
/// Parses "vector,graph,custom".
std::vector<RetrievalMode> parse_modes(std::string_view csv);

enum class ContextOrigin { vector, graph };

std::string_view to_string(ContextOrigin origin);

struct ContextEntry {
  std::string chunk_id;
  std::string doc_id;
  std::string source_name;
  std::string text;
  ContextOrigin origin = ContextOrigin::vector;
  std::optional<double> score;  // vector hits only
};

struct ContextBundle {
  std::vector<ContextEntry> entries;
  std::vector<Triple> triples;

  bool empty() const { return entries.empty(); }
  /// SHA-256 over entry ids, texts and triples; identifies c(q) in eval records.
  std::string digest() const;
};

struct Reference {
  std::string doc_id;
  std::string source_name;
  std::string chunk_id;

  bool operator==(const Reference&) const = default;
};

struct AnswerWithReferences {
  std::string answer;
  std::vector<Reference> references;
  RetrievalMode mode = RetrievalMode::custom;
  ContextBundle context;
  bool no_context = false;
  std::string standalone_query;  // the query retrieval actually used
};

inline constexpr std::string_view kNoContextAnswer =
    "No relevant information was found in the knowledge base for this question.";

struct RagOptions {
  std::size_t k = 5;
  int depth = 2;
  std::size_t context_char_budget = 12000;
  GraphOptions graph;
};

/// Vector, graph and custom retrieval plus answer synthesis over one KB
/// snapshot. Stateless apart from the providers, so concurrent calls are safe.
class RagEngine {
 public:
  RagEngine(ProviderSet providers, PromptLibrary prompts, RagOptions options = {});

  /// mode=vector: top-k chunks by cosine. mode=graph: chunks behind the
  /// triples reached from the query entities. mode=custom: vector entries
  /// then graph entries, deduplicated by chunk_id keeping the vector copy.
  /// Over the character budget, graph entries are dropped last-first.
  ContextBundle retrieve(const KbSnapshot& kb, std::string_view query, RetrievalMode mode,
                         std::optional<std::size_t> k = std::nullopt,
                         std::optional<int> depth = std::nullopt) const;

  ContextBundle retrieve_vector(const KbSnapshot& kb, std::string_view query, std::size_t k) const;
  ContextBundle retrieve_graph(const KbSnapshot& kb, std::string_view query, int depth) const;

  /// Calls the chat provider with the numbered contexts. An empty bundle
  /// gives the no-context answer without a provider call.
  AnswerWithReferences synthesize(std::string_view query, ContextBundle bundle,
                                  RetrievalMode mode) const;

  /// Standalone form of `query` given prior turns. Without a chat provider,
  /// the last user turn is prefixed to the query.
  std::string condense(std::string_view query, const std::vector<ChatMessage>& history) const;

  AnswerWithReferences chat(const KbSnapshot& kb, RetrievalMode mode, std::string_view query,
                            const std::vector<ChatMessage>& history = {},
                            std::optional<std::size_t> k = std::nullopt,
                            std::optional<int> depth = std::nullopt) const;

  /// The synthesis prompt text for a bundle (exposed for tests).
  std::string synthesis_prompt(std::string_view query, const ContextBundle& bundle) const;

  const RagOptions& options() const { return options_; }

 private:
  ProviderSet providers_;
  PromptLibrary prompts_;
  RagOptions options_;
};

/// Drops graph entries from the back, then vector entries from the back,
/// until the texts fit in `budget` characters. At least one entry is kept.
/// Triples whose source chunk was dropped go too.
void apply_context_budget(ContextBundle& bundle, std::size_t budget);

void to_json(nlohmann::json& j, const ContextEntry& e);
void to_json(nlohmann::json& j, const ContextBundle& b);
void to_json(nlohmann::json& j, const Reference& r);
void to_json(nlohmann::json& j, const AnswerWithReferences& a);
std::vector<ChatMessage> history_from_json(const nlohmann::json& j);

}  // namespace sagekb
