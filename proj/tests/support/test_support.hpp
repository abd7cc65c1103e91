#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <set>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "sagekb/mock_providers.hpp"
#include "sagekb/model.hpp"
#include "sagekb/providers.hpp"
#include "sagekb/store.hpp"
#include "sagekb/util.hpp"

namespace sagekb::testing {

/// Scratch directory removed on destruction.
class TempDir {
 public:
  TempDir();
  ~TempDir();
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::string str() const { return path_.string(); }

 private:
  std::filesystem::path path_;
};

Clock test_clock();
std::filesystem::path source_dir();
std::filesystem::path fixtures_dir();
std::string read_file(const std::filesystem::path& p);
void write_file(const std::filesystem::path& p, std::string_view data);

/// Chat + bag-of-words embedder, nothing else.
ProviderSet basic_providers(std::shared_ptr<ChatProvider> chat, std::uint32_t dim = 64);

/// Everything about a KB that retrieval can observe, in a canonical form.
/// Two snapshots with equal fingerprints hold the same documents, chunks,
/// embeddings, triples and report entries.
std::string kb_fingerprint(const KbSnapshot& snap);

/// Digest of every file under `dir` (names and bytes).
std::string directory_digest(const std::filesystem::path& dir);

/// Minimal archive writer: each entry stored or raw-deflated.
std::string make_zip(const std::vector<std::pair<std::string, std::string>>& entries, bool deflate);

/// One-page PDF whose content stream shows `lines`, optionally Flate-compressed.
std::string make_pdf(const std::vector<std::string>& lines, bool compress);

std::string deflate_raw(std::string_view data);
std::string zlib_compress(std::string_view data);

}  // namespace sagekb::testing
