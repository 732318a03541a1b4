#pragma once

#include <cstddef>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "pdv/core.hpp"
#include "pdv/retrieval.hpp"

namespace pdv {

/// Metric name -> value, in the order metrics were requested.
class MetricTable {
 public:
  void set(const std::string& name, double value);
  std::optional<double> get(const std::string& name) const;
  double at(const std::string& name) const;

  const std::vector<std::pair<std::string, double>>& items() const noexcept { return items_; }
  bool empty() const noexcept { return items_.empty(); }
  bool operator==(const MetricTable&) const = default;

 private:
  std::vector<std::pair<std::string, double>> items_;
};

struct GroupMetrics {
  std::string group;
  std::size_t num_queries = 0;
  MetricTable metrics;

  bool operator==(const GroupMetrics&) const = default;
};

struct EvalReport {
  MetricTable per_metric;
  std::size_t num_queries = 0;
  PDVParams params_used;
  std::vector<std::string> warnings;   // query ids that produced degenerate queries
  std::vector<GroupMetrics> per_group; // only when the bundles carry groups

  bool operator==(const EvalReport&) const = default;
};

/// 1.0 if any target appears in the first min(k, len) entries.
double recall_at_k(const RankedList& ranked, std::span<const std::string> targets, std::size_t k);

/// Truncated average precision normalized by min(k, |targets|).
double map_at_k(const RankedList& ranked, std::span<const std::string> targets, std::size_t k);

/// Recall after ranking only inside the per-query candidate subset.
double subset_recall_at_k(const Gallery& gallery, const Embedding& query,
                          std::span<const std::string> subset_ids,
                          std::span<const std::string> targets, std::size_t k);

struct EvalOptions {
  unsigned threads = 1;
  std::function<void(std::size_t done, std::size_t total)> progress;
};

/// Throws missing_target before any ranking if a target id is not in the gallery.
EvalReport evaluate_manifest(const Gallery& gallery, std::span<const QueryBundle> bundles,
                             const PDVParams& params, std::span<const std::size_t> ks,
                             const EvalOptions& options = {});

struct FilterStudyRow {
  double threshold = 0.0;
  double filtered_ratio = 0.0;  // mean fraction of the gallery removed per query
  std::size_t fallbacks = 0;    // queries whose filter kept nothing
  MetricTable unfiltered;       // recall@k over the full gallery
  MetricTable filtered;         // recall@k over the kept candidates
};

/// The filter is derived from each query's baseline ranking embedding; the
/// reranks under `params` then scan only the kept candidates.
std::vector<FilterStudyRow> filter_study(const Gallery& gallery, std::span<const QueryBundle> bundles,
                                         const PDVParams& params, FilterMode mode,
                                         std::span<const double> thresholds,
                                         std::span<const std::size_t> ks);

}  // namespace pdv
