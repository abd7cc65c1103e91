#include "sagekb/model.hpp"

#include <fmt/format.h>

#include "sagekb/error.hpp"
#include "sagekb/util.hpp"

namespace sagekb {

std::string_view to_string(MediaKind kind) {
  switch (kind) {
    case MediaKind::text: return "text";
    case MediaKind::report: return "report";
    case MediaKind::transcript: return "transcript";
  }
  return "text";
}

MediaKind media_kind_from_string(std::string_view s) {
  if (s == "text") return MediaKind::text;
  if (s == "report") return MediaKind::report;
  if (s == "transcript") return MediaKind::transcript;
  throw Error(ErrorCode::invalid_argument, fmt::format("unknown media kind '{}'", s));
}

std::string make_doc_id(std::string_view content_hash) {
  return "doc-" + std::string(content_hash.substr(0, 16));
}

std::string make_chunk_id(std::string_view doc_id, std::uint32_t ordinal) {
  return fmt::format("{}-{:05d}", doc_id, ordinal);
}

std::string make_kb_id(std::string_view name) {
  std::string slug = slugify(name);
  if (slug.empty()) slug = "kb";
  if (slug.size() > 40) slug.resize(40);
  return slug + "-" + sha256_hex(name).substr(0, 8);
}

void validate_triple(const Triple& t) {
  if (trim_view(t.subject).empty() || trim_view(t.predicate).empty() ||
      trim_view(t.object).empty()) {
    throw Error(ErrorCode::invalid_argument, "triple has an empty component");
  }
}

void to_json(nlohmann::json& j, const Chunk& c) {
  j = nlohmann::json{{"chunk_id", c.chunk_id}, {"doc_id", c.doc_id},
                     {"ordinal", c.ordinal},   {"text", c.text},
                     {"token_count", c.token_count}, {"embedding", c.embedding}};
}

void from_json(const nlohmann::json& j, Chunk& c) {
  j.at("chunk_id").get_to(c.chunk_id);
  j.at("doc_id").get_to(c.doc_id);
  j.at("ordinal").get_to(c.ordinal);
  j.at("text").get_to(c.text);
  j.at("token_count").get_to(c.token_count);
  j.at("embedding").get_to(c.embedding);
}

void to_json(nlohmann::json& j, const Triple& t) {
  j = nlohmann::json{{"subject", t.subject}, {"predicate", t.predicate},
                     {"object", t.object}, {"source_chunk_id", t.source_chunk_id}};
}

void from_json(const nlohmann::json& j, Triple& t) {
  j.at("subject").get_to(t.subject);
  j.at("predicate").get_to(t.predicate);
  j.at("object").get_to(t.object);
  j.at("source_chunk_id").get_to(t.source_chunk_id);
}

void to_json(nlohmann::json& j, const Document& d) {
  j = nlohmann::json{{"doc_id", d.doc_id},
                     {"kb_id", d.kb_id},
                     {"source_name", d.source_name},
                     {"media_kind", to_string(d.media_kind)},
                     {"content_hash", d.content_hash},
                     {"ingested_at", d.ingested_at},
                     {"metadata", d.metadata}};
}

void from_json(const nlohmann::json& j, Document& d) {
  j.at("doc_id").get_to(d.doc_id);
  j.at("kb_id").get_to(d.kb_id);
  j.at("source_name").get_to(d.source_name);
  d.media_kind = media_kind_from_string(j.at("media_kind").get<std::string>());
  j.at("content_hash").get_to(d.content_hash);
  j.at("ingested_at").get_to(d.ingested_at);
  d.metadata = j.value("metadata", std::map<std::string, std::string>{});
}

void to_json(nlohmann::json& j, const IndexManifest& m) {
  j = nlohmann::json{{"version", m.version}, {"count", m.count}, {"sha256", m.sha256}};
}

void from_json(const nlohmann::json& j, IndexManifest& m) {
  j.at("version").get_to(m.version);
  j.at("count").get_to(m.count);
  j.at("sha256").get_to(m.sha256);
}

void to_json(nlohmann::json& j, const ReportEntry& r) {
  j = nlohmann::json{{"report_id", r.report_id}, {"doc_id", r.doc_id},
                     {"title", r.title},         {"question", r.question},
                     {"created_at", r.created_at}};
}

void from_json(const nlohmann::json& j, ReportEntry& r) {
  j.at("report_id").get_to(r.report_id);
  j.at("doc_id").get_to(r.doc_id);
  j.at("title").get_to(r.title);
  j.at("question").get_to(r.question);
  j.at("created_at").get_to(r.created_at);
}

void to_json(nlohmann::json& j, const ReportSection& s) {
  j = nlohmann::json{{"heading", s.heading}, {"body", s.body}};
}

void to_json(nlohmann::json& j, const ResearchReport& r) {
  j = nlohmann::json{{"report_id", r.report_id},   {"question", r.question},
                     {"title", r.title},           {"sections", r.sections},
                     {"conclusion", r.conclusion}, {"references", r.references},
                     {"created_at", r.created_at}};
}

void to_json(nlohmann::json& j, const KbSummary& s) {
  j = nlohmann::json{{"kb_id", s.kb_id},
                     {"name", s.name},
                     {"created_at", s.created_at},
                     {"counts",
                      {{"documents", s.document_count},
                       {"chunks", s.chunk_count},
                       {"triples", s.triple_count}}}};
}

}  // namespace sagekb
