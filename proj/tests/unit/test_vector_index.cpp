#include <gtest/gtest.h>

#include <algorithm>
#include <random>

#include "oracles.hpp"
#include "sagekb/mock_providers.hpp"
#include "sagekb/vector_index.hpp"

namespace sagekb {
namespace {

std::vector<Chunk> hashed_chunks(std::size_t n, std::uint32_t dim) {
  HashEmbedder emb(dim);
  std::vector<Chunk> out;
  for (std::size_t i = 0; i < n; ++i) {
    Chunk c;
    c.chunk_id = make_chunk_id("doc-test", static_cast<std::uint32_t>(i));
    c.doc_id = "doc-test";
    c.ordinal = static_cast<std::uint32_t>(i);
    c.text = "chunk text " + std::to_string(i);
    c.embedding = emb.embed_one(c.text);
    out.push_back(std::move(c));
  }
  return out;
}

TEST(VectorIndexTest, AddIsIdempotent) {
  VectorIndex idx(8);
  const auto chunks = hashed_chunks(3, 8);
  EXPECT_EQ(idx.add_chunks(chunks), 3u);
  EXPECT_EQ(idx.add_chunks(chunks), 0u);
  EXPECT_EQ(idx.add_chunks({}), 0u);
  EXPECT_EQ(idx.size(), 3u);
}

TEST(VectorIndexTest, DimensionAndNormChecks) {
  VectorIndex idx(8);
  auto chunks = hashed_chunks(2, 8);
  chunks[1].embedding = HashEmbedder(4).embed_one("x");
  try {
    idx.add_chunks(chunks);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::dimension_mismatch);
  }
  EXPECT_EQ(idx.size(), 0u);
  auto bad = hashed_chunks(1, 8);
  bad[0].embedding[0] += 0.5f;
  EXPECT_THROW(idx.add_chunks(bad), Error);
  idx.add_chunks(hashed_chunks(1, 8));
  EXPECT_THROW(idx.search(HashEmbedder(4).embed_one("q"), 3), Error);
}

TEST(VectorIndexTest, EmptyIndexAndSelfSimilarity) {
  VectorIndex empty(8);
  EXPECT_TRUE(empty.search(HashEmbedder(8).embed_one("q"), 5).empty());
  VectorIndex idx(16);
  const auto chunks = hashed_chunks(20, 16);
  idx.add_chunks(chunks);
  const auto r = idx.search(chunks[7].embedding, 3);
  ASSERT_EQ(r.size(), 3u);
  EXPECT_EQ(r[0].chunk_id, chunks[7].chunk_id);
  EXPECT_NEAR(r[0].score, 1.0, 1e-6);
  EXPECT_EQ(r[0].rank, 1u);
  EXPECT_EQ(idx.search(chunks[0].embedding, 100).size(), 20u);
}

TEST(VectorIndexTest, MatchesExhaustiveScanOracle) {
  const auto chunks = hashed_chunks(500, 64);
  VectorIndex idx(64);
  idx.add_chunks(chunks);
  HashEmbedder q(64);
  for (int i = 0; i < 50; ++i) {
    const auto query = q.embed_one("query " + std::to_string(i));
    const auto got = idx.search(query, 10);
    const auto want = oracle::topk_scan(chunks, query, 10);
    ASSERT_EQ(got.size(), want.size());
    for (std::size_t j = 0; j < got.size(); ++j) {
      EXPECT_EQ(got[j].chunk_id, want[j].id);
      EXPECT_NEAR(got[j].score, want[j].score, 1e-6);
      EXPECT_EQ(got[j].rank, j + 1);
      if (j > 0) EXPECT_LE(got[j].score, got[j - 1].score);
    }
  }
}

TEST(VectorIndexTest, TiesBreakByIdAndInsertionOrderIsIrrelevant) {
  auto chunks = hashed_chunks(30, 8);
  for (std::size_t i = 0; i < chunks.size(); i += 3) chunks[i].embedding = chunks[0].embedding;
  VectorIndex a(8), b(8);
  a.add_chunks(chunks);
  std::mt19937 gen(3);
  auto shuffled = chunks;
  std::shuffle(shuffled.begin(), shuffled.end(), gen);
  b.add_chunks(shuffled);
  const auto ra = a.search(chunks[0].embedding, 15);
  const auto rb = b.search(chunks[0].embedding, 15);
  ASSERT_EQ(ra.size(), rb.size());
  for (std::size_t i = 0; i < ra.size(); ++i) {
    EXPECT_EQ(ra[i].chunk_id, rb[i].chunk_id);
    EXPECT_EQ(ra[i].score, rb[i].score);
  }
  for (std::size_t i = 1; i < 10; ++i) EXPECT_LT(ra[i - 1].chunk_id, ra[i].chunk_id);
}

}  // namespace
}  // namespace sagekb
