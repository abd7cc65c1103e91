#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "sagekb/model.hpp"
#include "sagekb/prompts.hpp"
#include "sagekb/providers.hpp"

namespace sagekb {

struct EntityMention {
  std::string surface;
  std::string normalized;

  bool operator==(const EntityMention&) const = default;
};

/// Lowercase, whitespace-collapsed form. Idempotent.
std::string normalize_entity(std::string_view s);
EntityMention make_mention(std::string_view surface);

struct GraphRetrieval {
  std::vector<Triple> triples;              // breadth-first order
  std::vector<std::string> source_chunks;   // first-seen order, no duplicates
  std::vector<EntityMention> matched_entities;
};

struct GraphOptions {
  std::size_t max_triples_per_chunk = 10;
  int default_depth = 2;
  int max_depth = 5;
  std::size_t max_triples_per_query = 30;
};

/// Triple store with entity adjacency. Value type, like VectorIndex.
class GraphIndex {
 public:
  /// Adds triples, skipping exact duplicates (same S, P, O and source).
  /// Every triple must be valid and its source chunk must satisfy
  /// `chunk_exists`; the batch is checked before anything is inserted.
  std::size_t add_triples(std::span<const Triple> triples,
                          const std::function<bool(const std::string&)>& chunk_exists);

  /// Breadth-first expansion from the query entities. Hop 1 takes every
  /// triple whose normalized subject or object is a query entity; hop d
  /// takes triples sharing an entity with a hop d-1 triple. Within a hop,
  /// triples keep insertion order. Stops once `cap` triples are collected.
  GraphRetrieval retrieve(std::span<const EntityMention> entities, int depth,
                          std::size_t cap) const;

  const std::vector<Triple>& triples() const { return triples_; }
  std::size_t size() const { return triples_.size(); }

  /// One "S\tP\tO\tsource" line per triple.
  std::string export_tsv() const;

 private:
  std::vector<Triple> triples_;
  std::unordered_set<std::string> keys_;
  std::unordered_map<std::string, std::vector<std::size_t>> by_entity_;
};

struct ExtractionResult {
  std::vector<Triple> triples;
  std::size_t skipped_lines = 0;
};

/// Parses "(S | P | O)" lines. Lines that do not parse are counted, not fatal.
ExtractionResult parse_triple_lines(std::string_view text, const std::string& source_chunk_id,
                                    std::size_t max_triples);

/// Asks the chat provider for triples in `chunk`.
ExtractionResult extract_triples(ChatProvider& chat, const PromptLibrary& prompts,
                                 const Chunk& chunk, std::size_t max_triples);

/// Capitalized spans (allowing "of", "the", "and", ... inside a span) and
/// quoted spans, with leading question words and articles dropped.
std::vector<EntityMention> rule_based_entities(std::string_view query);

/// Entities from the provider (one per line); falls back to
/// rule_based_entities() when `chat` is null or the call fails.
std::vector<EntityMention> extract_query_entities(ChatProvider* chat, const PromptLibrary& prompts,
                                                  std::string_view query);

}  // namespace sagekb
