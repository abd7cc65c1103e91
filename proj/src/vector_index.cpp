#include "sagekb/vector_index.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <unordered_set>

#include <fmt/format.h>

#include "sagekb/error.hpp"

namespace sagekb {

double l2_norm(std::span<const float> v) {
  double sum = 0.0;
  for (float x : v) sum += static_cast<double>(x) * static_cast<double>(x);
  return std::sqrt(sum);
}

bool is_unit_norm(std::span<const float> v, double tolerance) {
  return std::abs(l2_norm(v) - 1.0) <= tolerance;
}

std::size_t VectorIndex::add_chunks(std::span<const Chunk> chunks) {
  std::uint32_t dim = dimension_;
  std::unordered_set<std::string> batch_ids;
  std::vector<const Chunk*> fresh;
  for (const Chunk& c : chunks) {
    if (c.embedding.empty()) {
      throw Error(ErrorCode::dimension_mismatch,
                  fmt::format("chunk {} has no embedding", c.chunk_id));
    }
    if (dim == 0) dim = static_cast<std::uint32_t>(c.embedding.size());
    if (c.embedding.size() != dim) {
      throw Error(ErrorCode::dimension_mismatch,
                  fmt::format("chunk {} has dimension {}, index expects {}", c.chunk_id,
                              c.embedding.size(), dim));
    }
    if (!is_unit_norm(c.embedding)) {
      throw Error(ErrorCode::invalid_argument,
                  fmt::format("chunk {} embedding is not unit-norm", c.chunk_id));
    }
    if (!contains(c.chunk_id) && batch_ids.insert(c.chunk_id).second) {
      fresh.push_back(&c);
    }
  }
  dimension_ = dim;
  for (const Chunk* c : fresh) {
    position_.emplace(c->chunk_id, ids_.size());
    ids_.push_back(c->chunk_id);
    data_.insert(data_.end(), c->embedding.begin(), c->embedding.end());
  }
  return fresh.size();
}

std::vector<ScoredChunk> VectorIndex::search(std::span<const float> query,
                                             std::size_t k) const {
  if (k == 0) throw Error(ErrorCode::invalid_argument, "k must be >= 1");
  if (ids_.empty()) return {};
  if (query.size() != dimension_) {
    throw Error(ErrorCode::dimension_mismatch,
                fmt::format("query has dimension {}, index expects {}", query.size(),
                            dimension_));
  }
  if (!is_unit_norm(query)) {
    throw Error(ErrorCode::invalid_argument, "query vector is not unit-norm");
  }

  const std::size_t n = ids_.size();
  std::vector<double> scores(n);
  for (std::size_t i = 0; i < n; ++i) {
    const float* row = data_.data() + i * dimension_;
    double dot = 0.0;
    for (std::uint32_t d = 0; d < dimension_; ++d) {
      dot += static_cast<double>(row[d]) * static_cast<double>(query[d]);
    }
    scores[i] = dot;
  }

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  const std::size_t take = std::min(k, n);
  auto better = [&](std::size_t a, std::size_t b) {
    if (scores[a] != scores[b]) return scores[a] > scores[b];
    return ids_[a] < ids_[b];
  };
  std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(take),
                    order.end(), better);

  std::vector<ScoredChunk> out;
  out.reserve(take);
  for (std::size_t r = 0; r < take; ++r) {
    const std::size_t i = order[r];
    out.push_back({ids_[i], std::clamp(scores[i], -1.0, 1.0),
                   static_cast<std::uint32_t>(r + 1)});
  }
  return out;
}

}  // namespace sagekb
