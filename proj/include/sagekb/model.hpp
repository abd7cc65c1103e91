#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

namespace sagekb {

using Embedding = std::vector<float>;

struct IndexManifest {
  std::uint64_t version = 0;
  std::uint64_t count = 0;
  std::string sha256;  // digest of the backing record file

  bool operator==(const IndexManifest&) const = default;
};

struct KnowledgeBase {
  std::string kb_id;
  std::string name;
  std::string created_at;
  std::vector<std::string> document_ids;
  IndexManifest vector_manifest;
  IndexManifest graph_manifest;
  std::uint32_t embedding_dimension = 0;  // 0 until the first chunk lands
};

enum class MediaKind { text, report, transcript };

std::string_view to_string(MediaKind kind);
MediaKind media_kind_from_string(std::string_view s);

inline constexpr std::string_view kReportOriginKey = "origin";
inline constexpr std::string_view kReportOriginValue = "report-generator";

struct Document {
  std::string doc_id;
  std::string kb_id;
  std::string source_name;
  MediaKind media_kind = MediaKind::text;
  std::string content_hash;
  std::string ingested_at;
  std::map<std::string, std::string> metadata;
};

struct Chunk {
  std::string chunk_id;
  std::string doc_id;
  std::uint32_t ordinal = 0;
  std::string text;
  std::uint32_t token_count = 0;
  Embedding embedding;

  bool operator==(const Chunk&) const = default;
};

struct Triple {
  std::string subject;
  std::string predicate;
  std::string object;
  std::string source_chunk_id;

  auto operator<=>(const Triple&) const = default;
};

struct ReportSection {
  std::string heading;
  std::string body;

  bool operator==(const ReportSection&) const = default;
};

struct ResearchReport {
  std::string report_id;
  std::string question;
  std::string title;
  std::vector<ReportSection> sections;
  std::string conclusion;
  std::vector<std::string> references;
  std::string created_at;
};

/// Report entry kept in the KB manifest; the markdown lives on disk.
struct ReportEntry {
  std::string report_id;
  std::string doc_id;
  std::string title;
  std::string question;
  std::string created_at;
};

/// Summary row returned by Registry::list_kbs().
struct KbSummary {
  std::string kb_id;
  std::string name;
  std::string created_at;
  std::size_t document_count = 0;
  std::uint64_t chunk_count = 0;
  std::uint64_t triple_count = 0;
};

/// Deterministic identifiers. Chunk ids sort by (doc_id, ordinal).
std::string make_doc_id(std::string_view content_hash);
std::string make_chunk_id(std::string_view doc_id, std::uint32_t ordinal);
std::string make_kb_id(std::string_view name);

/// Throws invalid_argument unless all components are non-empty after trimming.
void validate_triple(const Triple& t);

void to_json(nlohmann::json& j, const Chunk& c);
void from_json(const nlohmann::json& j, Chunk& c);
void to_json(nlohmann::json& j, const Triple& t);
void from_json(const nlohmann::json& j, Triple& t);
void to_json(nlohmann::json& j, const Document& d);
void from_json(const nlohmann::json& j, Document& d);
void to_json(nlohmann::json& j, const IndexManifest& m);
void from_json(const nlohmann::json& j, IndexManifest& m);
void to_json(nlohmann::json& j, const ReportEntry& r);
void from_json(const nlohmann::json& j, ReportEntry& r);
void to_json(nlohmann::json& j, const ReportSection& s);
void to_json(nlohmann::json& j, const ResearchReport& r);
void to_json(nlohmann::json& j, const KbSummary& s);

}  // namespace sagekb
