#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "sagekb/model.hpp"

namespace sagekb {

struct ScoredChunk {
  std::string chunk_id;
  double score = 0.0;  // cosine similarity, in [-1, 1]
  std::uint32_t rank = 0;
};

inline constexpr double kUnitNormTolerance = 1e-6;

double l2_norm(std::span<const float> v);
bool is_unit_norm(std::span<const float> v, double tolerance = kUnitNormTolerance);

/// Exact cosine top-k over unit-normalized embeddings. Value type: a KB
/// snapshot owns one and a writer publishes an updated copy.
///
/// Results are sorted by descending score with ties broken by ascending
/// chunk_id, so the output does not depend on insertion order.
class VectorIndex {
 public:
  VectorIndex() = default;
  explicit VectorIndex(std::uint32_t dimension) : dimension_(dimension) {}

  /// Adds chunks not already present. Returns the number of new ids.
  /// The whole batch is validated before anything is inserted.
  std::size_t add_chunks(std::span<const Chunk> chunks);

  std::vector<ScoredChunk> search(std::span<const float> query, std::size_t k) const;

  bool contains(const std::string& chunk_id) const { return position_.count(chunk_id) > 0; }
  std::size_t size() const { return ids_.size(); }
  std::uint32_t dimension() const { return dimension_; }

 private:
  std::uint32_t dimension_ = 0;
  std::vector<std::string> ids_;
  std::vector<float> data_;  // row-major, size() x dimension_
  std::unordered_map<std::string, std::size_t> position_;
};

}  // namespace sagekb
