#include "pdv/metrics.hpp"

#include <algorithm>
#include <atomic>
#include <mutex>
#include <thread>

#include "pdv/error.hpp"

namespace pdv {

namespace {

bool is_target(const std::string& id, std::span<const std::string> targets) {
  return std::find(targets.begin(), targets.end(), id) != targets.end();
}

void check_metric_args(std::span<const std::string> targets, std::size_t k) {
  if (k == 0) throw Error(ErrorCode::invalid_parameter, "k must be >= 1");
  if (targets.empty()) throw Error(ErrorCode::invalid_parameter, "targets must be non-empty");
}

std::string metric_name(const char* kind, std::size_t k) {
  return std::string(kind) + "@" + std::to_string(k);
}

struct QueryScores {
  std::vector<double> values;
  bool degenerate = false;
};

}  // namespace

void MetricTable::set(const std::string& name, double value) {
  for (auto& [key, v] : items_) {
    if (key == name) {
      v = value;
      return;
    }
  }
  items_.emplace_back(name, value);
}

std::optional<double> MetricTable::get(const std::string& name) const {
  for (const auto& [key, v] : items_) {
    if (key == name) return v;
  }
  return std::nullopt;
}

double MetricTable::at(const std::string& name) const {
  if (auto v = get(name)) return *v;
  throw Error(ErrorCode::invalid_parameter, "metric '" + name + "' not in report");
}

double recall_at_k(const RankedList& ranked, std::span<const std::string> targets, std::size_t k) {
  check_metric_args(targets, k);
  const std::size_t depth = std::min(k, ranked.entries.size());
  for (std::size_t i = 0; i < depth; ++i) {
    if (is_target(ranked.entries[i].id, targets)) return 1.0;
  }
  return 0.0;
}

double map_at_k(const RankedList& ranked, std::span<const std::string> targets, std::size_t k) {
  check_metric_args(targets, k);
  const std::size_t depth = std::min(k, ranked.entries.size());
  double sum = 0.0;
  std::size_t hits = 0;
  for (std::size_t i = 0; i < depth; ++i) {
    if (is_target(ranked.entries[i].id, targets)) {
      ++hits;
      sum += static_cast<double>(hits) / static_cast<double>(i + 1);
    }
  }
  return sum / static_cast<double>(std::min(k, targets.size()));
}

double subset_recall_at_k(const Gallery& gallery, const Embedding& query,
                          std::span<const std::string> subset_ids,
                          std::span<const std::string> targets, std::size_t k) {
  check_metric_args(targets, k);
  for (const auto& id : subset_ids) {
    if (!gallery.find(id)) {
      throw Error(ErrorCode::subset_not_in_gallery, "subset id '" + id + "' is not in the gallery");
    }
  }
  for (const auto& t : targets) {
    if (!is_target(t, subset_ids)) {
      throw Error(ErrorCode::target_not_in_subset, "target '" + t + "' is not in the subset");
    }
  }
  const RankedList ranked = rank_topk(gallery, query, k, subset_ids);
  return recall_at_k(ranked, targets, k);
}

EvalReport evaluate_manifest(const Gallery& gallery, std::span<const QueryBundle> bundles,
                             const PDVParams& params, std::span<const std::size_t> ks,
                             const EvalOptions& options) {
  if (bundles.empty()) throw Error(ErrorCode::invalid_parameter, "no queries to evaluate");
  if (ks.empty()) throw Error(ErrorCode::invalid_parameter, "no cutoffs requested");
  for (const auto k : ks) {
    if (k == 0) throw Error(ErrorCode::invalid_parameter, "k must be >= 1");
  }
  validate_params(params);

  bool with_subsets = true;
  for (const auto& b : bundles) {
    validate_bundle(b, true);
    if (b.ref_text.dim() != gallery.dim()) {
      throw Error(ErrorCode::dimension_mismatch, "query " + b.query_id + " has dimension " +
                                                     std::to_string(b.ref_text.dim()) +
                                                     ", gallery has " + std::to_string(gallery.dim()));
    }
    for (const auto& t : b.target_ids) {
      if (!gallery.find(t)) {
        throw Error(ErrorCode::missing_target,
                    "query " + b.query_id + ": target '" + t + "' is not in the gallery");
      }
    }
    if (b.subset_ids) {
      for (const auto& id : *b.subset_ids) {
        if (!gallery.find(id)) {
          throw Error(ErrorCode::subset_not_in_gallery,
                      "query " + b.query_id + ": subset id '" + id + "' is not in the gallery");
        }
      }
    } else {
      with_subsets = false;
    }
  }

  std::vector<std::string> names;
  for (const auto k : ks) names.push_back(metric_name("recall", k));
  for (const auto k : ks) names.push_back(metric_name("map", k));
  if (with_subsets) {
    for (const auto k : ks) names.push_back(metric_name("rs", k));
  }
  const std::size_t depth = *std::max_element(ks.begin(), ks.end());

  std::vector<QueryScores> per_query(bundles.size());
  auto score_one = [&](std::size_t qi) {
    const QueryBundle& b = bundles[qi];
    QueryScores& out = per_query[qi];
    out.values.assign(names.size(), 0.0);
    Embedding query;
    try {
      query = compute_query_embedding(b, params);
    } catch (const Error& e) {
      if (e.code() != ErrorCode::degenerate_query) throw;
      out.degenerate = true;
      return;
    }
    const RankedList ranked = rank_topk(gallery, query, depth);
    std::size_t slot = 0;
    for (const auto k : ks) out.values[slot++] = recall_at_k(ranked, b.target_ids, k);
    for (const auto k : ks) out.values[slot++] = map_at_k(ranked, b.target_ids, k);
    if (with_subsets) {
      const CandidateSet subset = CandidateSet::from_ids(gallery, *b.subset_ids);
      const RankedList in_subset = rank_topk(gallery, query, depth, subset);
      for (const auto k : ks) out.values[slot++] = recall_at_k(in_subset, b.target_ids, k);
    }
  };

  std::atomic<std::size_t> done{0};
  std::mutex progress_mutex;
  auto run_range = [&](std::size_t begin, std::size_t step) {
    for (std::size_t qi = begin; qi < bundles.size(); qi += step) {
      score_one(qi);
      const std::size_t finished = ++done;
      if (options.progress) {
        std::lock_guard lock(progress_mutex);
        options.progress(finished, bundles.size());
      }
    }
  };
  const unsigned threads = std::max(1u, std::min<unsigned>(options.threads,
                                                           static_cast<unsigned>(bundles.size())));
  if (threads == 1) {
    run_range(0, 1);
  } else {
    std::vector<std::exception_ptr> failures(threads);
    {
      std::vector<std::jthread> pool;
      for (unsigned t = 0; t < threads; ++t) {
        pool.emplace_back([&, t] {
          try {
            run_range(t, threads);
          } catch (...) {
            failures[t] = std::current_exception();
          }
        });
      }
    }
    for (auto& f : failures) {
      if (f) std::rethrow_exception(f);
    }
  }

  // Reduction in manifest order keeps the means independent of scheduling.
  auto mean_over = [&](const std::vector<std::size_t>& members) {
    MetricTable table;
    for (std::size_t m = 0; m < names.size(); ++m) {
      double sum = 0.0;
      for (const auto qi : members) sum += per_query[qi].values[m];
      table.set(names[m], sum / static_cast<double>(members.size()));
    }
    return table;
  };

  EvalReport report;
  report.num_queries = bundles.size();
  report.params_used = params;
  std::vector<std::size_t> all(bundles.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  report.per_metric = mean_over(all);
  for (std::size_t qi = 0; qi < bundles.size(); ++qi) {
    if (per_query[qi].degenerate) report.warnings.push_back(bundles[qi].query_id);
  }

  std::vector<std::pair<std::string, std::vector<std::size_t>>> groups;
  for (std::size_t qi = 0; qi < bundles.size(); ++qi) {
    const std::string& g = bundles[qi].group;
    if (g.empty()) continue;
    auto it = std::find_if(groups.begin(), groups.end(), [&](const auto& e) { return e.first == g; });
    if (it == groups.end()) {
      groups.push_back({g, {qi}});
    } else {
      it->second.push_back(qi);
    }
  }
  for (const auto& [name, members] : groups) {
    report.per_group.push_back({name, members.size(), mean_over(members)});
  }
  return report;
}

std::vector<FilterStudyRow> filter_study(const Gallery& gallery, std::span<const QueryBundle> bundles,
                                         const PDVParams& params, FilterMode mode,
                                         std::span<const double> thresholds,
                                         std::span<const std::size_t> ks) {
  if (bundles.empty()) throw Error(ErrorCode::invalid_parameter, "no queries to study");
  if (ks.empty()) throw Error(ErrorCode::invalid_parameter, "no cutoffs requested");
  const std::size_t depth = *std::max_element(ks.begin(), ks.end());
  auto gallery_ptr = std::shared_ptr<const Gallery>(&gallery, [](const Gallery*) {});

  struct Prepared {
    RerankSession session;
    Embedding initial;
    RankedList unfiltered;
    bool degenerate = false;
  };
  std::vector<Prepared> prepared;
  prepared.reserve(bundles.size());
  for (const auto& b : bundles) {
    validate_bundle(b, true);
    RerankSession session(gallery_ptr, b);
    Embedding initial = session.prepared().query_embedding(kBaselineParams);
    RankedList unfiltered;
    bool degenerate = false;
    try {
      unfiltered = session.rerank(params, depth, false).ranking;
    } catch (const Error& e) {
      if (e.code() != ErrorCode::degenerate_query) throw;
      degenerate = true;
    }
    prepared.push_back({std::move(session), std::move(initial), std::move(unfiltered), degenerate});
  }

  std::vector<FilterStudyRow> rows;
  for (const double threshold : thresholds) {
    const FilterSpec spec{mode, threshold, "baseline"};
    validate_filter(spec);
    FilterStudyRow row;
    row.threshold = threshold;
    std::vector<double> full(ks.size(), 0.0);
    std::vector<double> kept(ks.size(), 0.0);
    double removed = 0.0;
    for (std::size_t qi = 0; qi < prepared.size(); ++qi) {
      Prepared& p = prepared[qi];
      CandidateSet candidates = filter_candidates(gallery, p.initial, spec);
      removed += 1.0 - static_cast<double>(candidates.size()) / static_cast<double>(gallery.size());
      if (candidates.empty()) ++row.fallbacks;
      if (p.degenerate) continue;
      p.session.set_filter(std::move(candidates));
      const RankedList filtered = p.session.rerank(params, depth, true).ranking;
      for (std::size_t i = 0; i < ks.size(); ++i) {
        full[i] += recall_at_k(p.unfiltered, bundles[qi].target_ids, ks[i]);
        kept[i] += recall_at_k(filtered, bundles[qi].target_ids, ks[i]);
      }
    }
    const auto n = static_cast<double>(prepared.size());
    row.filtered_ratio = removed / n;
    for (std::size_t i = 0; i < ks.size(); ++i) {
      row.unfiltered.set(metric_name("recall", ks[i]), full[i] / n);
      row.filtered.set(metric_name("recall", ks[i]), kept[i] / n);
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

}  // namespace pdv
