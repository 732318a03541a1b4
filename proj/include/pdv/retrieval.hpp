#pragma once

#include <cstddef>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "pdv/core.hpp"

namespace pdv {

/// Immutable id-indexed matrix of unit-normalized image embeddings.
class Gallery {
 public:
  /// Normalizes every row. Throws empty_gallery, duplicate_id,
  /// dimension_mismatch, or invalid_embedding for a zero row.
  static Gallery build(const EmbeddingRecords& records);
  static Gallery build(std::span<const std::pair<std::string, Embedding>> records);

  std::size_t size() const noexcept { return ids_.size(); }
  std::size_t dim() const noexcept { return dim_; }
  const std::vector<std::string>& ids() const noexcept { return ids_; }
  const std::string& id(std::size_t row) const { return ids_.at(row); }
  std::span<const float> row(std::size_t r) const {
    return std::span<const float>(matrix_).subspan(r * dim_, dim_);
  }
  std::optional<std::size_t> find(const std::string& id) const;

 private:
  Gallery() = default;
  void append(const std::string& id, const Embedding& e);

  std::size_t dim_ = 0;
  std::vector<std::string> ids_;
  std::vector<float> matrix_;
  std::unordered_map<std::string, std::size_t> index_;
};

struct RankedEntry {
  std::string id;
  double score = 0.0;

  bool operator==(const RankedEntry&) const = default;
};

struct RankedList {
  std::vector<RankedEntry> entries;
  PDVParams params_used;
  std::string query_id;

  std::vector<std::string> ids() const;
  bool operator==(const RankedList&) const = default;
};

/// Sorted, duplicate-free row indices of a gallery.
class CandidateSet {
 public:
  /// Throws unknown_id for an id absent from the gallery; duplicates collapse.
  static CandidateSet from_ids(const Gallery& gallery, std::span<const std::string> ids);
  static CandidateSet from_rows(std::vector<std::size_t> rows);

  std::span<const std::size_t> rows() const noexcept { return rows_; }
  std::size_t size() const noexcept { return rows_.size(); }
  bool empty() const noexcept { return rows_.empty(); }
  bool contains(std::size_t row) const;
  std::vector<std::string> ids(const Gallery& gallery) const;

 private:
  std::vector<std::size_t> rows_;
};

enum class FilterMode { drop_if_distance_above, keep_if_similarity_at_least };

struct FilterSpec {
  FilterMode mode = FilterMode::drop_if_distance_above;
  double threshold = 0.0;
  std::string source_ranking;
};

/// Cosine similarity of `query` against gallery row `row` (rows are unit).
double cosine_to_row(const Gallery& gallery, std::span<const float> query, double query_norm,
                     std::size_t row);

/// Exact top-k by cosine similarity; ties resolve by ascending id.
/// Throws zero_query, dimension_mismatch, invalid_parameter (k == 0).
RankedList rank_topk(const Gallery& gallery, const Embedding& query, std::size_t k);
RankedList rank_topk(const Gallery& gallery, const Embedding& query, std::size_t k,
                     const CandidateSet& restrict_to);
RankedList rank_topk(const Gallery& gallery, const Embedding& query, std::size_t k,
                     std::span<const std::string> restrict_to);

/// Whether a cosine value passes the filter predicate.
bool passes_filter(const FilterSpec& spec, double cosine);
void validate_filter(const FilterSpec& spec);

/// Ids passing the predicate, in gallery order. May be empty.
std::vector<std::string> filter_gallery(const Gallery& gallery, const Embedding& initial_query,
                                        const FilterSpec& spec);
CandidateSet filter_candidates(const Gallery& gallery, const Embedding& initial_query,
                               const FilterSpec& spec);

struct RerankOutcome {
  RankedList ranking;
  Embedding query;
  bool filter_fallback = false;  // active filter was empty; full gallery scanned
  std::size_t candidates = 0;
};

/// Cached query state bound to a gallery. Reranking only recombines the
/// cached normalized embeddings; nothing is re-ingested.
class RerankSession {
 public:
  RerankSession(std::shared_ptr<const Gallery> gallery, const QueryBundle& bundle);

  RerankOutcome rerank(const PDVParams& params, std::size_t k, bool use_filter = true) const;

  void set_filter(CandidateSet filter) { filter_ = std::move(filter); }
  void clear_filter() { filter_.reset(); }
  const std::optional<CandidateSet>& filter() const noexcept { return filter_; }

  const QueryBundle& bundle() const noexcept { return bundle_; }
  const PreparedQuery& prepared() const noexcept { return prepared_; }
  const Gallery& gallery() const noexcept { return *gallery_; }
  const std::shared_ptr<const Gallery>& gallery_ptr() const noexcept { return gallery_; }

 private:
  std::shared_ptr<const Gallery> gallery_;
  QueryBundle bundle_;
  PreparedQuery prepared_;
  std::optional<CandidateSet> filter_;
};

RerankOutcome rerank_session(const RerankSession& session, const PDVParams& params, std::size_t k);

}  // namespace pdv
