#include "sagekb/store.hpp"

#include <fcntl.h>
#include <sys/file.h>
#include <unistd.h>

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include <fmt/format.h>
#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include "sagekb/error.hpp"

namespace sagekb {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

constexpr const char* kManifest = "manifest.json";
constexpr const char* kChunks = "chunks.jsonl";
constexpr const char* kTriples = "triples.jsonl";
constexpr const char* kReports = "reports";
constexpr int kFormatVersion = 1;

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw Error(ErrorCode::storage, fmt::format("cannot read {}", p.string()));
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file_atomic(const fs::path& p, std::string_view data) {
  const fs::path tmp = p.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    out.write(data.data(), static_cast<std::streamsize>(data.size()));
    out.flush();
    if (!out) throw Error(ErrorCode::storage, fmt::format("cannot write {}", tmp.string()));
  }
  std::error_code ec;
  fs::rename(tmp, p, ec);
  if (ec) throw Error(ErrorCode::storage, fmt::format("cannot replace {}: {}", p.string(), ec.message()));
}

void append_file(const fs::path& p, std::string_view data) {
  std::ofstream out(p, std::ios::binary | std::ios::app);
  out.write(data.data(), static_cast<std::streamsize>(data.size()));
  out.flush();
  if (!out) throw Error(ErrorCode::storage, fmt::format("cannot append to {}", p.string()));
}

/// Exclusive advisory lock on <dir>/.lock for the lifetime of the object.
class DirLock {
 public:
  explicit DirLock(const fs::path& dir) {
    fd_ = ::open((dir / ".lock").c_str(), O_CREAT | O_RDWR, 0644);
    if (fd_ < 0 || ::flock(fd_, LOCK_EX) != 0) {
      if (fd_ >= 0) ::close(fd_);
      throw Error(ErrorCode::storage, fmt::format("cannot lock {}", dir.string()));
    }
  }
  ~DirLock() {
    ::flock(fd_, LOCK_UN);
    ::close(fd_);
  }
  DirLock(const DirLock&) = delete;
  DirLock& operator=(const DirLock&) = delete;

 private:
  int fd_ = -1;
};

json manifest_json(const KbSnapshot& s) {
  return json{{"format_version", kFormatVersion},
              {"kb_id", s.kb.kb_id},
              {"name", s.kb.name},
              {"created_at", s.kb.created_at},
              {"embedding_dimension", s.kb.embedding_dimension},
              {"documents", s.documents},
              {"reports", s.reports},
              {"vector_manifest", s.kb.vector_manifest},
              {"graph_manifest", s.kb.graph_manifest}};
}

std::vector<std::string> nonempty_lines(const std::string& data) {
  std::vector<std::string> out;
  for (auto& line : split_lines(data)) {
    if (!line.empty()) out.push_back(std::move(line));
  }
  return out;
}

[[noreturn]] void corrupted(const fs::path& dir, const std::string& why) {
  throw Error(ErrorCode::corrupted_store, fmt::format("knowledge base {} is corrupted: {}",
                                                      dir.filename().string(), why));
}

void check_report_id(const std::string& id) {
  if (id.empty() || id.find_first_of("/\\.") != std::string::npos) {
    throw Error(ErrorCode::invalid_argument, fmt::format("invalid report id '{}'", id));
  }
}

}  // namespace

const Chunk* KbSnapshot::find_chunk(const std::string& chunk_id) const {
  auto it = chunk_pos_.find(chunk_id);
  return it == chunk_pos_.end() ? nullptr : &chunks[it->second];
}

const Document* KbSnapshot::find_document(const std::string& doc_id) const {
  for (const auto& d : documents) {
    if (d.doc_id == doc_id) return &d;
  }
  return nullptr;
}

const Document* KbSnapshot::find_by_hash(const std::string& content_hash) const {
  for (const auto& d : documents) {
    if (d.content_hash == content_hash) return &d;
  }
  return nullptr;
}

std::shared_ptr<KbStore> KbStore::open(const fs::path& dir) {
  if (!fs::exists(dir / kManifest)) {
    throw Error(ErrorCode::kb_not_found,
                fmt::format("knowledge base '{}' not found", dir.filename().string()));
  }
  auto snap = std::make_shared<KbSnapshot>();
  json m;
  try {
    m = json::parse(read_file(dir / kManifest));
    snap->kb.kb_id = m.at("kb_id").get<std::string>();
    snap->kb.name = m.at("name").get<std::string>();
    snap->kb.created_at = m.at("created_at").get<std::string>();
    snap->kb.embedding_dimension = m.value("embedding_dimension", 0u);
    snap->documents = m.at("documents").get<std::vector<Document>>();
    snap->reports = m.value("reports", std::vector<ReportEntry>{});
    snap->kb.vector_manifest = m.at("vector_manifest").get<IndexManifest>();
    snap->kb.graph_manifest = m.at("graph_manifest").get<IndexManifest>();
  } catch (const json::exception& e) {
    corrupted(dir, fmt::format("unreadable manifest ({})", e.what()));
  }
  for (const auto& d : snap->documents) snap->kb.document_ids.push_back(d.doc_id);

  const std::string chunk_bytes = read_file(dir / kChunks);
  if (sha256_hex(chunk_bytes) != snap->kb.vector_manifest.sha256) {
    corrupted(dir, "chunk records do not match the stored digest");
  }
  const auto chunk_lines = nonempty_lines(chunk_bytes);
  if (chunk_lines.size() != snap->kb.vector_manifest.count) {
    corrupted(dir, fmt::format("manifest declares {} chunks, found {}",
                               snap->kb.vector_manifest.count, chunk_lines.size()));
  }
  try {
    for (const auto& line : chunk_lines) {
      Chunk c = json::parse(line).get<Chunk>();
      snap->chunk_pos_.emplace(c.chunk_id, snap->chunks.size());
      snap->chunks.push_back(std::move(c));
    }
  } catch (const json::exception& e) {
    corrupted(dir, fmt::format("bad chunk record ({})", e.what()));
  }
  try {
    snap->vectors = VectorIndex(snap->kb.embedding_dimension);
    snap->vectors.add_chunks(snap->chunks);
  } catch (const Error& e) {
    corrupted(dir, e.what());
  }

  const std::string triple_bytes = read_file(dir / kTriples);
  if (sha256_hex(triple_bytes) != snap->kb.graph_manifest.sha256) {
    corrupted(dir, "triple records do not match the stored digest");
  }
  const auto triple_lines = nonempty_lines(triple_bytes);
  if (triple_lines.size() != snap->kb.graph_manifest.count) {
    corrupted(dir, fmt::format("manifest declares {} triples, found {}",
                               snap->kb.graph_manifest.count, triple_lines.size()));
  }
  std::vector<Triple> triples;
  try {
    for (const auto& line : triple_lines) triples.push_back(json::parse(line).get<Triple>());
    const auto* raw = snap.get();
    snap->graph.add_triples(triples, [raw](const std::string& id) { return raw->find_chunk(id) != nullptr; });
  } catch (const json::exception& e) {
    corrupted(dir, fmt::format("bad triple record ({})", e.what()));
  } catch (const Error& e) {
    corrupted(dir, e.what());
  }

  std::shared_ptr<KbStore> store(new KbStore(dir));
  store->snap_ = std::move(snap);
  return store;
}

std::shared_ptr<const KbSnapshot> KbStore::snapshot() const {
  std::lock_guard lock(snap_mu_);
  return snap_;
}

std::vector<CommitOutcome> KbStore::commit(const WriteBatch& batch) {
  std::lock_guard writer(write_mu_);
  if (!fs::exists(dir_ / kManifest)) {
    throw Error(ErrorCode::kb_not_found,
                fmt::format("knowledge base '{}' not found", dir_.filename().string()));
  }
  DirLock dir_lock(dir_);

  const auto current = snapshot();
  auto next = std::make_shared<KbSnapshot>(*current);
  std::vector<CommitOutcome> outcomes;
  std::string chunk_append;
  std::string triple_append;
  std::size_t added_chunks = 0;
  std::size_t added_triples = 0;

  for (const PreparedDocument& pd : batch.documents) {
    if (const Document* existing = next->find_by_hash(pd.document.content_hash)) {
      outcomes.push_back({existing->doc_id, true, 0, 0});
      continue;
    }
    if (pd.chunks.empty()) {
      throw Error(ErrorCode::invalid_argument, "document has no chunks");
    }
    for (std::size_t i = 0; i < pd.chunks.size(); ++i) {
      const Chunk& c = pd.chunks[i];
      if (c.doc_id != pd.document.doc_id || c.ordinal != i || c.token_count == 0) {
        throw Error(ErrorCode::invalid_argument,
                    fmt::format("chunk {} breaks the ordinal/ownership invariants", c.chunk_id));
      }
    }
    const std::size_t before = next->vectors.size();
    next->vectors.add_chunks(pd.chunks);
    if (next->vectors.size() - before != pd.chunks.size()) {
      throw Error(ErrorCode::invalid_argument, "chunk ids collide with existing chunks");
    }
    next->kb.embedding_dimension = next->vectors.dimension();
    for (const Chunk& c : pd.chunks) {
      next->chunk_pos_.emplace(c.chunk_id, next->chunks.size());
      next->chunks.push_back(c);
      chunk_append += json(c).dump();
      chunk_append += '\n';
    }
    const std::size_t triples_before = next->graph.size();
    const KbSnapshot* raw = next.get();
    next->graph.add_triples(pd.triples,
                            [raw](const std::string& id) { return raw->find_chunk(id) != nullptr; });
    const auto& all = next->graph.triples();
    for (std::size_t i = triples_before; i < all.size(); ++i) {
      triple_append += json(all[i]).dump();
      triple_append += '\n';
    }
    Document doc = pd.document;
    doc.kb_id = next->kb.kb_id;
    next->documents.push_back(doc);
    next->kb.document_ids.push_back(doc.doc_id);
    added_chunks += pd.chunks.size();
    added_triples += all.size() - triples_before;
    outcomes.push_back({doc.doc_id, false, pd.chunks.size(), all.size() - triples_before});
  }
  if (batch.report) {
    check_report_id(batch.report->entry.report_id);
    auto same = std::find_if(next->reports.begin(), next->reports.end(), [&](const ReportEntry& r) {
      return r.report_id == batch.report->entry.report_id;
    });
    if (same != next->reports.end()) *same = batch.report->entry;
    else next->reports.push_back(batch.report->entry);
  }

  const bool nothing_new = added_chunks == 0 && added_triples == 0 && !batch.report &&
                           next->documents.size() == current->documents.size();
  if (nothing_new) return outcomes;

  const fs::path chunks_path = dir_ / kChunks;
  const fs::path triples_path = dir_ / kTriples;
  const auto chunks_size = fs::file_size(chunks_path);
  const auto triples_size = fs::file_size(triples_path);
  std::optional<fs::path> report_path;
  std::optional<std::string> previous_report;
  try {
    if (!chunk_append.empty()) append_file(chunks_path, chunk_append);
    if (!triple_append.empty()) append_file(triples_path, triple_append);
    if (batch.report) {
      report_path = dir_ / kReports / (batch.report->entry.report_id + ".md");
      fs::create_directories(report_path->parent_path());
      if (fs::exists(*report_path)) previous_report = read_file(*report_path);
      write_file_atomic(*report_path, batch.report->markdown);
    }
    if (added_chunks > 0) ++next->kb.vector_manifest.version;
    if (added_triples > 0) ++next->kb.graph_manifest.version;
    next->kb.vector_manifest.count = next->chunks.size();
    next->kb.graph_manifest.count = next->graph.size();
    next->kb.vector_manifest.sha256 = sha256_hex(read_file(chunks_path));
    next->kb.graph_manifest.sha256 = sha256_hex(read_file(triples_path));
    write_file_atomic(dir_ / kManifest, manifest_json(*next).dump(2));
  } catch (...) {
    std::error_code ec;
    fs::resize_file(chunks_path, chunks_size, ec);
    fs::resize_file(triples_path, triples_size, ec);
    if (report_path && previous_report) {
      try {
        write_file_atomic(*report_path, *previous_report);
      } catch (...) {
      }
    } else if (report_path) {
      fs::remove(*report_path, ec);
    }
    throw;
  }

  {
    std::lock_guard lock(snap_mu_);
    snap_ = std::move(next);
  }
  return outcomes;
}

std::string KbStore::read_report(const std::string& report_id) const {
  check_report_id(report_id);
  const fs::path p = dir_ / kReports / (report_id + ".md");
  if (!fs::exists(p)) {
    throw Error(ErrorCode::not_found, fmt::format("report '{}' not found", report_id));
  }
  return read_file(p);
}

Registry::Registry(fs::path root, Clock clock) : root_(std::move(root)), clock_(std::move(clock)) {}

fs::path Registry::default_root() {
  if (const char* env = std::getenv("SAGEKB_ROOT"); env && *env) return fs::path(env);
  return fs::path("sagekb-data");
}

KnowledgeBase Registry::create_kb(const std::string& name) {
  const std::string clean = trim(name);
  if (clean.empty()) throw Error(ErrorCode::invalid_argument, "knowledge base name is empty");
  std::lock_guard lock(mu_);
  for (const auto& s : list_kbs()) {
    if (s.name == clean) {
      throw Error(ErrorCode::already_exists,
                  fmt::format("a knowledge base named '{}' already exists", clean));
    }
  }
  const std::string kb_id = make_kb_id(clean);
  const fs::path dir = root_ / kb_id;
  if (fs::exists(dir)) {
    throw Error(ErrorCode::already_exists, fmt::format("knowledge base '{}' already exists", kb_id));
  }
  KbSnapshot snap;
  snap.kb.kb_id = kb_id;
  snap.kb.name = clean;
  snap.kb.created_at = to_rfc3339(clock_());
  snap.kb.vector_manifest.sha256 = sha256_hex("");
  snap.kb.graph_manifest.sha256 = sha256_hex("");
  try {
    fs::create_directories(dir / kReports);
    write_file_atomic(dir / kChunks, "");
    write_file_atomic(dir / kTriples, "");
    write_file_atomic(dir / kManifest, manifest_json(snap).dump(2));
  } catch (const fs::filesystem_error& e) {
    throw Error(ErrorCode::storage, e.what());
  }
  spdlog::info("created knowledge base {} ({})", kb_id, clean);
  return snap.kb;
}

std::shared_ptr<KbStore> Registry::open_kb(const std::string& kb_id) {
  if (kb_id.empty() || kb_id.find('/') != std::string::npos || kb_id.front() == '.') {
    throw Error(ErrorCode::kb_not_found, fmt::format("knowledge base '{}' not found", kb_id));
  }
  std::lock_guard lock(mu_);
  if (auto it = open_.find(kb_id); it != open_.end()) {
    if (auto store = it->second.lock()) {
      if (fs::exists(store->dir() / kManifest)) return store;
    }
  }
  auto store = KbStore::open(root_ / kb_id);
  open_[kb_id] = store;
  return store;
}

std::vector<KbSummary> Registry::list_kbs() const {
  std::vector<KbSummary> out;
  if (!fs::exists(root_)) return out;
  std::error_code ec;
  for (const auto& entry : fs::directory_iterator(root_, ec)) {
    if (!entry.is_directory() || !fs::exists(entry.path() / kManifest)) continue;
    try {
      const json m = json::parse(read_file(entry.path() / kManifest));
      KbSummary s;
      s.kb_id = m.at("kb_id").get<std::string>();
      s.name = m.at("name").get<std::string>();
      s.created_at = m.at("created_at").get<std::string>();
      s.document_count = m.at("documents").size();
      s.chunk_count = m.at("vector_manifest").at("count").get<std::uint64_t>();
      s.triple_count = m.at("graph_manifest").at("count").get<std::uint64_t>();
      out.push_back(std::move(s));
    } catch (const json::exception& e) {
      spdlog::warn("skipping unreadable manifest in {}: {}", entry.path().string(), e.what());
    }
  }
  if (ec) throw Error(ErrorCode::storage, fmt::format("cannot list {}: {}", root_.string(), ec.message()));
  std::sort(out.begin(), out.end(), [](const KbSummary& a, const KbSummary& b) {
    return std::tie(a.created_at, a.kb_id) < std::tie(b.created_at, b.kb_id);
  });
  return out;
}

void Registry::delete_kb(const std::string& kb_id) {
  std::lock_guard lock(mu_);
  const fs::path dir = root_ / kb_id;
  if (kb_id.empty() || kb_id.find('/') != std::string::npos || !fs::exists(dir / kManifest)) {
    throw Error(ErrorCode::kb_not_found, fmt::format("knowledge base '{}' not found", kb_id));
  }
  std::error_code ec;
  fs::remove_all(dir, ec);
  if (ec) throw Error(ErrorCode::storage, fmt::format("cannot delete {}: {}", kb_id, ec.message()));
  open_.erase(kb_id);
  spdlog::info("deleted knowledge base {}", kb_id);
}

std::string Registry::resolve(const std::string& id_or_name) const {
  for (const auto& s : list_kbs()) {
    if (s.kb_id == id_or_name) return s.kb_id;
  }
  for (const auto& s : list_kbs()) {
    if (s.name == id_or_name) return s.kb_id;
  }
  throw Error(ErrorCode::kb_not_found, fmt::format("knowledge base '{}' not found", id_or_name));
}

}  // namespace sagekb
