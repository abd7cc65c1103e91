#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "sagekb/graph_index.hpp"
#include "sagekb/model.hpp"
#include "sagekb/util.hpp"
#include "sagekb/vector_index.hpp"

namespace sagekb {

/// Immutable view of one knowledge base. Readers hold a shared_ptr to a
/// snapshot; writers publish a new one.
struct KbSnapshot {
  KnowledgeBase kb;
  std::vector<Document> documents;
  std::vector<Chunk> chunks;
  VectorIndex vectors;
  GraphIndex graph;
  std::vector<ReportEntry> reports;

  const Chunk* find_chunk(const std::string& chunk_id) const;
  const Document* find_document(const std::string& doc_id) const;
  const Document* find_by_hash(const std::string& content_hash) const;

 private:
  friend class KbStore;
  std::unordered_map<std::string, std::size_t> chunk_pos_;
};

/// One document with its chunks and triples, ready to be committed.
struct PreparedDocument {
  Document document;
  std::vector<Chunk> chunks;
  std::vector<Triple> triples;
};

struct WriteBatch {
  std::vector<PreparedDocument> documents;
  struct Report {
    ReportEntry entry;
    std::string markdown;
  };
  std::optional<Report> report;
};

struct CommitOutcome {
  std::string doc_id;
  bool deduplicated = false;  // content_hash already present; nothing written
  std::size_t chunk_count = 0;
  std::size_t triple_count = 0;
};

/// On-disk layout of one KB:
///   <dir>/manifest.json   KB header, documents, report entries, index manifests
///   <dir>/chunks.jsonl    append-only chunk records with inline embeddings
///   <dir>/triples.jsonl   append-only triple records
///   <dir>/reports/<report_id>.md
///
/// Each index manifest stores the record count and SHA-256 of its file, so
/// open() detects truncation or tampering.
class KbStore {
 public:
  static std::shared_ptr<KbStore> open(const std::filesystem::path& dir);

  std::shared_ptr<const KbSnapshot> snapshot() const;

  /// Validates and persists the batch under the KB writer lock. A document
  /// whose content_hash already exists is a no-op reporting the existing id.
  /// On any failure the files are rolled back and the snapshot is unchanged.
  std::vector<CommitOutcome> commit(const WriteBatch& batch);

  std::string read_report(const std::string& report_id) const;
  const std::filesystem::path& dir() const { return dir_; }

 private:
  explicit KbStore(std::filesystem::path dir) : dir_(std::move(dir)) {}

  std::filesystem::path dir_;
  std::mutex write_mu_;
  mutable std::mutex snap_mu_;
  std::shared_ptr<const KbSnapshot> snap_;
};

/// Registry of knowledge bases under one root directory.
class Registry {
 public:
  explicit Registry(std::filesystem::path root, Clock clock = system_clock());

  /// $SAGEKB_ROOT, or ./sagekb-data when unset.
  static std::filesystem::path default_root();

  KnowledgeBase create_kb(const std::string& name);
  std::shared_ptr<KbStore> open_kb(const std::string& kb_id);
  std::vector<KbSummary> list_kbs() const;
  void delete_kb(const std::string& kb_id);

  /// Accepts a kb_id or a KB name and returns the kb_id.
  std::string resolve(const std::string& id_or_name) const;

  const std::filesystem::path& root() const { return root_; }
  const Clock& clock() const { return clock_; }

 private:
  std::filesystem::path root_;
  Clock clock_;
  mutable std::mutex mu_;
  std::map<std::string, std::weak_ptr<KbStore>> open_;
};

}  // namespace sagekb
