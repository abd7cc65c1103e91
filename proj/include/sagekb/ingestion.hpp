#pragma once

#include <cstddef>
#include <functional>
#include <map>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "sagekb/graph_index.hpp"
#include "sagekb/model.hpp"
#include "sagekb/prompts.hpp"
#include "sagekb/providers.hpp"
#include "sagekb/store.hpp"
#include "sagekb/util.hpp"

namespace sagekb {

enum class DocumentFormat { pdf, docx, txt, csv, xlsx, md };

std::string_view to_string(DocumentFormat f);
DocumentFormat format_from_string(std::string_view s);
/// Format from a file name's extension; unsupported_format when unknown.
DocumentFormat format_from_path(std::string_view path);

/// Format → text extractor. Defaults cover every DocumentFormat; any entry
/// can be replaced (e.g. with an external PDF toolkit).
class ParserRegistry {
 public:
  using Parser = std::function<std::string(std::string_view bytes)>;

  static ParserRegistry defaults();
  void set(DocumentFormat format, Parser parser);

  /// Non-empty UTF-8 text. Errors: unsupported_format, undecodable,
  /// empty_extraction (all tagged with stage "parse").
  std::string parse(std::string_view bytes, DocumentFormat format) const;

 private:
  std::map<DocumentFormat, Parser> parsers_;
};

std::string parse_document(std::string_view bytes, DocumentFormat format);

// Individual extractors, exposed for tests.
bool is_valid_utf8(std::string_view s);
std::string parse_csv_text(std::string_view bytes);
std::string extract_pdf_text(std::string_view bytes);
std::string extract_docx_text(std::string_view bytes);
std::string extract_xlsx_text(std::string_view bytes);

/// Reads one member of a zip archive (stored or deflated).
std::string read_zip_member(std::string_view archive, std::string_view name);
std::vector<std::string> list_zip_members(std::string_view archive);

struct ChunkingPolicy {
  std::size_t target_tokens = 512;
  std::size_t overlap_tokens = 64;

  void validate() const;
};

/// Token ranges [begin, end) for a document of n tokens. Consecutive ranges
/// overlap by exactly overlap_tokens; the last range ends at n.
std::vector<std::pair<std::size_t, std::size_t>> chunk_spans(std::size_t n_tokens,
                                                             const ChunkingPolicy& policy);

/// Whitespace-token chunking; chunk texts are tokens joined by single spaces.
std::vector<std::string> chunk_text(std::string_view text, const ChunkingPolicy& policy);

struct IngestOptions {
  ChunkingPolicy chunking;
  GraphOptions graph;
  std::size_t parallelism = 4;  // concurrent triple-extraction calls
};

struct IngestRequest {
  std::string bytes;
  DocumentFormat format = DocumentFormat::txt;
  std::string source_name;
  MediaKind kind = MediaKind::text;
  std::map<std::string, std::string> metadata;
};

struct IngestResult {
  std::string doc_id;
  std::size_t chunk_count = 0;
  std::size_t triple_count = 0;
  bool deduplicated = false;
  std::size_t skipped_triple_lines = 0;
};

/// Turns documents into chunks (embedded) and triples (extracted), then
/// commits each call as one atomic batch. Provider failures abort the call
/// before anything is written.
class Ingestor {
 public:
  Ingestor(ProviderSet providers, PromptLibrary prompts, IngestOptions options = {},
           Clock clock = system_clock(), ParserRegistry parsers = ParserRegistry::defaults());

  IngestResult ingest(KbStore& kb, const IngestRequest& req);
  std::vector<IngestResult> ingest_many(KbStore& kb, const std::vector<IngestRequest>& reqs);

  IngestResult ingest_text(KbStore& kb, std::string text, std::string source_name,
                           MediaKind kind = MediaKind::text,
                           std::map<std::string, std::string> metadata = {});

  /// Transcribes audio/video and ingests the transcript. The media itself is
  /// not stored.
  IngestResult ingest_media(KbStore& kb, std::string_view media, MediaType type,
                            std::string source_name);

  /// Builds the document, chunks and triples for already-extracted text.
  /// `skipped` receives the number of unparseable extraction lines.
  PreparedDocument prepare(const std::string& kb_id, const std::string& text,
                           const std::string& source_name, MediaKind kind,
                           std::map<std::string, std::string> metadata,
                           std::size_t* skipped = nullptr) const;

  const IngestOptions& options() const { return options_; }

 private:
  ProviderSet providers_;
  PromptLibrary prompts_;
  IngestOptions options_;
  Clock clock_;
  ParserRegistry parsers_;
};

}  // namespace sagekb
