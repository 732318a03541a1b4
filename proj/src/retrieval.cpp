#include "pdv/retrieval.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <thread>

#include "pdv/error.hpp"

namespace pdv {

namespace {

constexpr double kZeroNorm = 1e-12;
// Below this many multiply-adds a single thread wins.
constexpr std::size_t kParallelWork = std::size_t{1} << 21;

struct Scored {
  double score;
  std::size_t row;
};

template <typename RowAt>
std::vector<Scored> score_rows(const Gallery& gallery, std::span<const float> query, double qnorm,
                               std::size_t count, RowAt row_at) {
  std::vector<Scored> scored(count);
  auto work = [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      const std::size_t row = row_at(i);
      scored[i] = {cosine_to_row(gallery, query, qnorm, row), row};
    }
  };
  const unsigned hw = std::max(1u, std::thread::hardware_concurrency());
  if (hw == 1 || count * gallery.dim() < kParallelWork) {
    work(0, count);
    return scored;
  }
  // Each row's score is computed independently, so chunking cannot change results.
  const std::size_t chunk = (count + hw - 1) / hw;
  std::vector<std::jthread> workers;
  for (std::size_t begin = 0; begin < count; begin += chunk) {
    workers.emplace_back(work, begin, std::min(count, begin + chunk));
  }
  return scored;
}

RankedList select_topk(const Gallery& gallery, std::vector<Scored> scored, std::size_t k) {
  const auto before = [&](const Scored& a, const Scored& b) {
    if (a.score != b.score) return a.score > b.score;
    return gallery.id(a.row) < gallery.id(b.row);
  };
  const std::size_t take = std::min(k, scored.size());
  std::partial_sort(scored.begin(), scored.begin() + static_cast<std::ptrdiff_t>(take), scored.end(),
                    before);
  RankedList out;
  out.entries.reserve(take);
  for (std::size_t i = 0; i < take; ++i) {
    out.entries.push_back({gallery.id(scored[i].row), scored[i].score});
  }
  return out;
}

double checked_query_norm(const Gallery& gallery, const Embedding& query, std::size_t k) {
  if (query.dim() != gallery.dim()) {
    throw Error(ErrorCode::dimension_mismatch, "query dimension " + std::to_string(query.dim()) +
                                                   " vs gallery dimension " +
                                                   std::to_string(gallery.dim()));
  }
  if (k == 0) throw Error(ErrorCode::invalid_parameter, "k must be positive");
  const double qnorm = norm(query.values());
  if (qnorm <= kZeroNorm) throw Error(ErrorCode::zero_query, "query embedding is zero");
  return qnorm;
}

}  // namespace

Gallery Gallery::build(const EmbeddingRecords& records) {
  if (records.ids.size() != records.embeddings.size()) {
    throw Error(ErrorCode::schema_violation, "ids and embeddings differ in length");
  }
  if (records.ids.empty()) throw Error(ErrorCode::empty_gallery, "gallery has no records");
  Gallery g;
  g.dim_ = records.embeddings.front().dim();
  g.ids_.reserve(records.size());
  g.matrix_.reserve(records.size() * g.dim_);
  for (std::size_t i = 0; i < records.size(); ++i) g.append(records.ids[i], records.embeddings[i]);
  return g;
}

Gallery Gallery::build(std::span<const std::pair<std::string, Embedding>> records) {
  if (records.empty()) throw Error(ErrorCode::empty_gallery, "gallery has no records");
  Gallery g;
  g.dim_ = records.front().second.dim();
  for (const auto& [id, e] : records) g.append(id, e);
  return g;
}

void Gallery::append(const std::string& id, const Embedding& e) {
  if (e.dim() != dim_) {
    throw Error(ErrorCode::dimension_mismatch, "gallery item '" + id + "' has dimension " +
                                                   std::to_string(e.dim()) + ", expected " +
                                                   std::to_string(dim_));
  }
  if (!index_.emplace(id, ids_.size()).second) {
    throw Error(ErrorCode::duplicate_id, "duplicate gallery id '" + id + "'");
  }
  const Embedding unit = normalize(e);
  if (std::abs(norm(unit.values()) - 1.0) > 1e-4) {
    throw Error(ErrorCode::invalid_embedding, "gallery item '" + id + "' is a zero vector");
  }
  ids_.push_back(id);
  matrix_.insert(matrix_.end(), unit.values().begin(), unit.values().end());
}

std::optional<std::size_t> Gallery::find(const std::string& id) const {
  const auto it = index_.find(id);
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

std::vector<std::string> RankedList::ids() const {
  std::vector<std::string> out;
  out.reserve(entries.size());
  for (const auto& e : entries) out.push_back(e.id);
  return out;
}

CandidateSet CandidateSet::from_ids(const Gallery& gallery, std::span<const std::string> ids) {
  std::vector<std::size_t> rows;
  rows.reserve(ids.size());
  for (const auto& id : ids) {
    const auto row = gallery.find(id);
    if (!row) throw Error(ErrorCode::unknown_id, "id '" + id + "' is not in the gallery");
    rows.push_back(*row);
  }
  return from_rows(std::move(rows));
}

CandidateSet CandidateSet::from_rows(std::vector<std::size_t> rows) {
  std::sort(rows.begin(), rows.end());
  rows.erase(std::unique(rows.begin(), rows.end()), rows.end());
  CandidateSet out;
  out.rows_ = std::move(rows);
  return out;
}

bool CandidateSet::contains(std::size_t row) const {
  return std::binary_search(rows_.begin(), rows_.end(), row);
}

std::vector<std::string> CandidateSet::ids(const Gallery& gallery) const {
  std::vector<std::string> out;
  out.reserve(rows_.size());
  for (const auto row : rows_) out.push_back(gallery.id(row));
  return out;
}

double cosine_to_row(const Gallery& gallery, std::span<const float> query, double query_norm,
                     std::size_t row) {
  const auto r = gallery.row(row);
  double acc = 0.0;
  for (std::size_t i = 0; i < r.size(); ++i) {
    acc += static_cast<double>(query[i]) * static_cast<double>(r[i]);
  }
  return acc / query_norm;
}

RankedList rank_topk(const Gallery& gallery, const Embedding& query, std::size_t k) {
  const double qnorm = checked_query_norm(gallery, query, k);
  return select_topk(gallery,
                     score_rows(gallery, query.values(), qnorm, gallery.size(),
                                [](std::size_t i) { return i; }),
                     k);
}

RankedList rank_topk(const Gallery& gallery, const Embedding& query, std::size_t k,
                     const CandidateSet& restrict_to) {
  const double qnorm = checked_query_norm(gallery, query, k);
  const auto rows = restrict_to.rows();
  return select_topk(gallery,
                     score_rows(gallery, query.values(), qnorm, rows.size(),
                                [rows](std::size_t i) { return rows[i]; }),
                     k);
}

RankedList rank_topk(const Gallery& gallery, const Embedding& query, std::size_t k,
                     std::span<const std::string> restrict_to) {
  return rank_topk(gallery, query, k, CandidateSet::from_ids(gallery, restrict_to));
}

void validate_filter(const FilterSpec& spec) {
  const bool distance = spec.mode == FilterMode::drop_if_distance_above;
  const double lo = distance ? 0.0 : -1.0;
  const double hi = distance ? 2.0 : 1.0;
  if (!(spec.threshold >= lo && spec.threshold <= hi)) {
    throw Error(ErrorCode::invalid_parameter,
                "filter threshold " + std::to_string(spec.threshold) + " outside [" +
                    std::to_string(lo) + ", " + std::to_string(hi) + "]");
  }
}

bool passes_filter(const FilterSpec& spec, double cosine) {
  if (spec.mode == FilterMode::drop_if_distance_above) return 1.0 - cosine <= spec.threshold;
  return cosine >= spec.threshold;
}

CandidateSet filter_candidates(const Gallery& gallery, const Embedding& initial_query,
                               const FilterSpec& spec) {
  validate_filter(spec);
  const double qnorm = checked_query_norm(gallery, initial_query, 1);
  std::vector<std::size_t> kept;
  for (std::size_t row = 0; row < gallery.size(); ++row) {
    if (passes_filter(spec, cosine_to_row(gallery, initial_query.values(), qnorm, row))) {
      kept.push_back(row);
    }
  }
  return CandidateSet::from_rows(std::move(kept));
}

std::vector<std::string> filter_gallery(const Gallery& gallery, const Embedding& initial_query,
                                        const FilterSpec& spec) {
  return filter_candidates(gallery, initial_query, spec).ids(gallery);
}

RerankSession::RerankSession(std::shared_ptr<const Gallery> gallery, const QueryBundle& bundle)
    : gallery_(std::move(gallery)), bundle_(bundle), prepared_(bundle) {
  if (!gallery_) throw Error(ErrorCode::unknown_gallery, "session requires a gallery");
  if (prepared_.dim() != gallery_->dim()) {
    throw Error(ErrorCode::dimension_mismatch,
                "bundle dimension " + std::to_string(prepared_.dim()) + " vs gallery dimension " +
                    std::to_string(gallery_->dim()));
  }
}

RerankOutcome RerankSession::rerank(const PDVParams& params, std::size_t k, bool use_filter) const {
  RerankOutcome out;
  out.query = prepared_.query_embedding(params);
  if (use_filter && filter_ && !filter_->empty()) {
    out.ranking = rank_topk(*gallery_, out.query, k, *filter_);
    out.candidates = filter_->size();
  } else {
    out.filter_fallback = use_filter && filter_ && filter_->empty();
    out.ranking = rank_topk(*gallery_, out.query, k);
    out.candidates = gallery_->size();
  }
  out.ranking.params_used = params;
  out.ranking.query_id = bundle_.query_id;
  return out;
}

RerankOutcome rerank_session(const RerankSession& session, const PDVParams& params, std::size_t k) {
  return session.rerank(params, k, true);
}

}  // namespace pdv
