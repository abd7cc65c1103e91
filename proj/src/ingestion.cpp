#include "sagekb/ingestion.hpp"

#include <algorithm>
#include <mutex>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "sagekb/error.hpp"

namespace sagekb {

std::string_view to_string(DocumentFormat f) {
  switch (f) {
    case DocumentFormat::pdf: return "pdf";
    case DocumentFormat::docx: return "docx";
    case DocumentFormat::txt: return "txt";
    case DocumentFormat::csv: return "csv";
    case DocumentFormat::xlsx: return "xlsx";
    case DocumentFormat::md: return "md";
  }
  return "txt";
}

DocumentFormat format_from_string(std::string_view s) {
  std::string f = to_lower(trim_view(s));
  if (!f.empty() && f.front() == '.') f.erase(0, 1);
  if (f == "pdf") return DocumentFormat::pdf;
  if (f == "docx") return DocumentFormat::docx;
  if (f == "txt" || f == "text") return DocumentFormat::txt;
  if (f == "csv") return DocumentFormat::csv;
  if (f == "xlsx") return DocumentFormat::xlsx;
  if (f == "md" || f == "markdown") return DocumentFormat::md;
  throw Error(ErrorCode::unsupported_format, fmt::format("unsupported format '{}'", s), "parse");
}

DocumentFormat format_from_path(std::string_view path) {
  const auto slash = path.find_last_of("/\\");
  const std::string_view base = slash == std::string_view::npos ? path : path.substr(slash + 1);
  const auto dot = base.rfind('.');
  if (dot == std::string_view::npos) {
    throw Error(ErrorCode::unsupported_format, fmt::format("'{}' has no file extension", base), "parse");
  }
  return format_from_string(base.substr(dot + 1));
}

ParserRegistry ParserRegistry::defaults() {
  ParserRegistry r;
  auto plain = [](std::string_view b) {
    std::string s(b);
    if (s.starts_with("\xEF\xBB\xBF")) s.erase(0, 3);
    return s;
  };
  r.set(DocumentFormat::txt, plain);
  r.set(DocumentFormat::md, plain);
  r.set(DocumentFormat::csv, [plain](std::string_view b) { return parse_csv_text(plain(b)); });
  r.set(DocumentFormat::pdf, extract_pdf_text);
  r.set(DocumentFormat::docx, extract_docx_text);
  r.set(DocumentFormat::xlsx, extract_xlsx_text);
  return r;
}

void ParserRegistry::set(DocumentFormat format, Parser parser) { parsers_[format] = std::move(parser); }

std::string ParserRegistry::parse(std::string_view bytes, DocumentFormat format) const {
  const auto it = parsers_.find(format);
  if (it == parsers_.end()) {
    throw Error(ErrorCode::unsupported_format,
                fmt::format("no parser registered for {}", to_string(format)), "parse");
  }
  const bool textual = format == DocumentFormat::txt || format == DocumentFormat::md ||
                       format == DocumentFormat::csv;
  if (textual && !is_valid_utf8(bytes)) {
    throw Error(ErrorCode::undecodable, "file is not valid UTF-8", "parse");
  }
  std::string text;
  try {
    text = it->second(bytes);
  } catch (const Error& e) {
    throw Error(e.code(), e.what(), "parse");
  }
  if (!is_valid_utf8(text)) throw Error(ErrorCode::undecodable, "extracted text is not valid UTF-8", "parse");
  if (trim_view(text).empty()) {
    throw Error(ErrorCode::empty_extraction,
                fmt::format("no text could be extracted from the {} file", to_string(format)), "parse");
  }
  return text;
}

std::string parse_document(std::string_view bytes, DocumentFormat format) {
  static const ParserRegistry registry = ParserRegistry::defaults();
  return registry.parse(bytes, format);
}

void ChunkingPolicy::validate() const {
  if (target_tokens == 0) throw Error(ErrorCode::invalid_argument, "target_tokens must be > 0");
  if (overlap_tokens >= target_tokens) {
    throw Error(ErrorCode::invalid_argument, "overlap_tokens must be smaller than target_tokens");
  }
}

std::vector<std::pair<std::size_t, std::size_t>> chunk_spans(std::size_t n,
                                                             const ChunkingPolicy& policy) {
  policy.validate();
  std::vector<std::pair<std::size_t, std::size_t>> spans;
  if (n == 0) return spans;
  const std::size_t step = policy.target_tokens - policy.overlap_tokens;
  for (std::size_t start = 0;; start += step) {
    const std::size_t end = std::min(start + policy.target_tokens, n);
    spans.emplace_back(start, end);
    if (end == n) break;
  }
  return spans;
}

std::vector<std::string> chunk_text(std::string_view text, const ChunkingPolicy& policy) {
  const auto tokens = split_whitespace(text);
  if (tokens.empty()) throw Error(ErrorCode::invalid_argument, "cannot chunk empty text");
  std::vector<std::string> out;
  for (const auto& [b, e] : chunk_spans(tokens.size(), policy)) {
    out.push_back(join(std::vector<std::string>(tokens.begin() + b, tokens.begin() + e), " "));
  }
  return out;
}

Ingestor::Ingestor(ProviderSet providers, PromptLibrary prompts, IngestOptions options, Clock clock,
                   ParserRegistry parsers)
    : providers_(std::move(providers)),
      prompts_(std::move(prompts)),
      options_(options),
      clock_(std::move(clock)),
      parsers_(std::move(parsers)) {
  options_.chunking.validate();
}

PreparedDocument Ingestor::prepare(const std::string& kb_id, const std::string& text,
                                   const std::string& source_name, MediaKind kind,
                                   std::map<std::string, std::string> metadata,
                                   std::size_t* skipped) const {
  if (!providers_.embedder) throw Error(ErrorCode::invalid_argument, "ingestion needs an embedding provider");
  PreparedDocument p;
  Document& d = p.document;
  d.content_hash = sha256_hex(text);
  d.doc_id = make_doc_id(d.content_hash);
  d.kb_id = kb_id;
  d.source_name = source_name;
  d.media_kind = kind;
  d.ingested_at = to_rfc3339(clock_());
  d.metadata = std::move(metadata);
  if (kind == MediaKind::report) d.metadata[std::string(kReportOriginKey)] = kReportOriginValue;

  const auto tokens = split_whitespace(text);
  if (tokens.empty()) throw Error(ErrorCode::empty_extraction, "document has no tokens", "chunk");
  const auto spans = chunk_spans(tokens.size(), options_.chunking);
  std::vector<std::string> texts;
  texts.reserve(spans.size());
  for (std::size_t i = 0; i < spans.size(); ++i) {
    const auto [b, e] = spans[i];
    Chunk c;
    c.doc_id = d.doc_id;
    c.ordinal = static_cast<std::uint32_t>(i);
    c.chunk_id = make_chunk_id(d.doc_id, c.ordinal);
    c.text = join(std::vector<std::string>(tokens.begin() + b, tokens.begin() + e), " ");
    c.token_count = static_cast<std::uint32_t>(e - b);
    texts.push_back(c.text);
    p.chunks.push_back(std::move(c));
  }

  std::vector<Embedding> vectors;
  try {
    vectors = providers_.embedder->embed(texts);
  } catch (const Error& e) {
    throw e.with_stage("embed");
  }
  for (std::size_t i = 0; i < p.chunks.size(); ++i) p.chunks[i].embedding = std::move(vectors[i]);

  std::size_t skipped_total = 0;
  if (providers_.chat) {
    std::vector<ExtractionResult> results(p.chunks.size());
    parallel_for(p.chunks.size(), options_.parallelism, [&](std::size_t i) {
      results[i] = extract_triples(*providers_.chat, prompts_, p.chunks[i],
                                   options_.graph.max_triples_per_chunk);
    });
    for (auto& r : results) {
      skipped_total += r.skipped_lines;
      for (auto& t : r.triples) p.triples.push_back(std::move(t));
    }
  }
  if (skipped) *skipped = skipped_total;
  return p;
}

std::vector<IngestResult> Ingestor::ingest_many(KbStore& kb, const std::vector<IngestRequest>& reqs) {
  const auto snap = kb.snapshot();
  WriteBatch batch;
  std::vector<IngestResult> results(reqs.size());
  std::vector<std::size_t> batch_slot(reqs.size(), SIZE_MAX);
  std::map<std::string, std::size_t> hash_seen;  // content hash → request index within this call
  for (std::size_t i = 0; i < reqs.size(); ++i) {
    const IngestRequest& r = reqs[i];
    if (trim_view(r.source_name).empty()) throw Error(ErrorCode::invalid_argument, "source_name is empty");
    const std::string text = parsers_.parse(r.bytes, r.format);
    const std::string hash = sha256_hex(text);
    if (const Document* existing = snap->find_by_hash(hash)) {
      results[i].doc_id = existing->doc_id;
      results[i].deduplicated = true;
      continue;
    }
    if (auto it = hash_seen.find(hash); it != hash_seen.end()) {
      results[i].doc_id = make_doc_id(hash);
      results[i].deduplicated = true;
      continue;
    }
    hash_seen[hash] = i;
    std::size_t skipped = 0;
    PreparedDocument p;
    try {
      p = prepare(snap->kb.kb_id, text, r.source_name, r.kind, r.metadata, &skipped);
    } catch (const Error& e) {
      throw e.with_stage("extract");
    }
    results[i].skipped_triple_lines = skipped;
    batch_slot[i] = batch.documents.size();
    batch.documents.push_back(std::move(p));
  }
  if (batch.documents.empty()) return results;

  const auto outcomes = kb.commit(batch);
  for (std::size_t i = 0; i < reqs.size(); ++i) {
    if (batch_slot[i] == SIZE_MAX) continue;
    const CommitOutcome& o = outcomes[batch_slot[i]];
    results[i].doc_id = o.doc_id;
    results[i].deduplicated = o.deduplicated;
    results[i].chunk_count = o.chunk_count;
    results[i].triple_count = o.triple_count;
  }
  for (const auto& r : results) {
    if (!r.deduplicated) {
      spdlog::info("ingested {}: {} chunks, {} triples", r.doc_id, r.chunk_count, r.triple_count);
    }
  }
  return results;
}

IngestResult Ingestor::ingest(KbStore& kb, const IngestRequest& req) {
  return ingest_many(kb, {req}).front();
}

IngestResult Ingestor::ingest_text(KbStore& kb, std::string text, std::string source_name,
                                   MediaKind kind, std::map<std::string, std::string> metadata) {
  IngestRequest r;
  r.bytes = std::move(text);
  r.format = DocumentFormat::txt;
  r.source_name = std::move(source_name);
  r.kind = kind;
  r.metadata = std::move(metadata);
  return ingest(kb, r);
}

IngestResult Ingestor::ingest_media(KbStore& kb, std::string_view media, MediaType type,
                                    std::string source_name) {
  std::string transcript;
  try {
    transcript = providers_.require_transcriber().transcribe(media, type);
  } catch (const Error& e) {
    throw e.with_stage("transcribe");
  }
  return ingest_text(kb, std::move(transcript), std::move(source_name), MediaKind::transcript,
                     {{"media_type", std::string(to_string(type))}});
}

}  // namespace sagekb
