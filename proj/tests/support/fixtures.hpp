#pragma once

// Random fixtures and independent reference implementations for tests. The
// oracles deliberately avoid the library's ranking and metric code paths.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "pdv/core.hpp"
#include "pdv/retrieval.hpp"

namespace pdv::test {

using Rng = std::mt19937_64;

inline Embedding random_embedding(Rng& rng, std::size_t dim, double scale = 1.0) {
  std::uniform_real_distribution<double> u(-scale, scale);
  std::vector<float> v(dim);
  double n = 0.0;
  while (n < 1e-3) {
    for (auto& x : v) x = static_cast<float>(u(rng));
    n = norm(std::span<const float>(v));
  }
  return Embedding(std::move(v));
}

inline std::string item_id(std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "img%05zu", i);
  return buf;
}

inline EmbeddingRecords random_records(Rng& rng, std::size_t n, std::size_t dim) {
  EmbeddingRecords r;
  for (std::size_t i = 0; i < n; ++i) {
    r.ids.push_back(item_id(i));
    r.embeddings.push_back(random_embedding(rng, dim));
  }
  return r;
}

inline QueryBundle random_bundle(Rng& rng, std::size_t dim, const std::string& id = "q") {
  QueryBundle b;
  b.query_id = id;
  b.ref_text = random_embedding(rng, dim);
  b.composed_text = random_embedding(rng, dim);
  b.ref_image = random_embedding(rng, dim);
  return b;
}

inline std::vector<float> to_vec(const Embedding& e) {
  return std::vector<float>(e.values().begin(), e.values().end());
}

namespace oracle {

/// Extended-precision cosine scores against the stored (unit) gallery rows.
inline std::vector<long double> scores(const Gallery& g, const Embedding& q) {
  long double qn = 0.0L;
  for (const float x : q.values()) qn += static_cast<long double>(x) * x;
  qn = std::sqrt(qn);
  std::vector<long double> s(g.size());
  for (std::size_t r = 0; r < g.size(); ++r) {
    long double acc = 0.0L;
    const auto row = g.row(r);
    for (std::size_t i = 0; i < row.size(); ++i) acc += static_cast<long double>(q[i]) * row[i];
    s[r] = acc / qn;
  }
  return s;
}

/// 1-based rank of each candidate row by exhaustive comparison counting.
inline std::vector<std::size_t> ranks(const Gallery& g, const std::vector<long double>& s,
                                      const std::vector<std::size_t>& candidates) {
  std::vector<std::size_t> out(g.size(), 0);
  for (const auto a : candidates) {
    std::size_t better = 0;
    for (const auto b : candidates) {
      if (b == a) continue;
      if (s[b] > s[a] || (s[b] == s[a] && g.id(b) < g.id(a))) ++better;
    }
    out[a] = better + 1;
  }
  return out;
}

inline std::vector<std::size_t> all_rows(const Gallery& g) {
  std::vector<std::size_t> rows(g.size());
  for (std::size_t i = 0; i < rows.size(); ++i) rows[i] = i;
  return rows;
}

inline std::vector<std::size_t> target_ranks(const Gallery& g, const std::vector<std::size_t>& rank,
                                             const std::vector<std::string>& targets) {
  std::vector<std::size_t> out;
  for (const auto& t : targets) out.push_back(rank[*g.find(t)]);
  std::sort(out.begin(), out.end());
  return out;
}

inline double recall(const std::vector<std::size_t>& target_ranks, std::size_t k) {
  return !target_ranks.empty() && target_ranks.front() <= k ? 1.0 : 0.0;
}

/// Sum over targets within the cutoff of (targets ranked at or above it) / rank.
inline double average_precision(const std::vector<std::size_t>& target_ranks, std::size_t k) {
  double sum = 0.0;
  for (std::size_t j = 0; j < target_ranks.size(); ++j) {
    if (target_ranks[j] <= k) sum += static_cast<double>(j + 1) / static_cast<double>(target_ranks[j]);
  }
  return sum / static_cast<double>(std::min(k, target_ranks.size()));
}

/// Minimizer of ||text_target - (image + alpha * pdv)|| by projection.
inline double closed_form_alpha(std::span<const double> text_target, const Embedding& image,
                                std::span<const double> pdv) {
  double num = 0.0;
  double den = 0.0;
  for (std::size_t i = 0; i < pdv.size(); ++i) {
    num += (text_target[i] - image[i]) * pdv[i];
    den += pdv[i] * pdv[i];
  }
  return num / den;
}

}  // namespace oracle

}  // namespace pdv::test

#include <atomic>
#include <filesystem>

namespace pdv::test {

/// Scratch directory removed on destruction.
class TempDir {
 public:
  TempDir() {
    static std::atomic<int> counter{0};
    const auto tag = std::to_string(std::random_device{}()) + "_" + std::to_string(counter++);
    path_ = std::filesystem::temp_directory_path() / ("pdv_test_" + tag);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const noexcept { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

}  // namespace pdv::test
