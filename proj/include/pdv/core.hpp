#pragma once

// Prompt directional vector arithmetic: normalization, residual extraction,
// text/image composition and fusion of composed embeddings.
//
// Storage is 32-bit; every intermediate (residuals, composed vectors, dot
// products, norms) is carried in 64-bit. Only normalize() produces a stored
// Embedding again.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace pdv {

/// Fixed-dimension, finite, 32-bit embedding. Construction validates.
class Embedding {
 public:
  Embedding() = default;
  explicit Embedding(std::vector<float> values);

  std::size_t dim() const noexcept { return values_.size(); }
  bool empty() const noexcept { return values_.empty(); }
  std::span<const float> values() const noexcept { return values_; }
  float operator[](std::size_t i) const noexcept { return values_[i]; }

  bool operator==(const Embedding&) const = default;

 private:
  std::vector<float> values_;
};

/// Un-normalized 64-bit working vector (residuals and composed embeddings).
using RawVector = std::vector<double>;

/// Ids and embeddings in stored order, as produced by loaders.
struct EmbeddingRecords {
  std::vector<std::string> ids;
  std::vector<Embedding> embeddings;

  std::size_t size() const noexcept { return ids.size(); }
  bool operator==(const EmbeddingRecords&) const = default;
};

struct PDVParams {
  double alpha_t = 1.0;
  double alpha_i = 1.0;
  double beta = 1.0;

  bool operator==(const PDVParams&) const = default;
};

/// Baseline setting: every method reduces to its unmodified composed text query.
inline constexpr PDVParams kBaselineParams{1.0, 1.0, 1.0};

struct QueryBundle {
  std::string query_id;
  Embedding ref_text;       // unprompted reference description
  Embedding composed_text;  // reference composed with the user prompt
  Embedding ref_image;
  std::vector<std::string> target_ids;
  std::optional<std::vector<std::string>> subset_ids;
  std::optional<std::string> prompt_text;
  std::string group;

  bool operator==(const QueryBundle&) const = default;
};

/// Throws invalid_parameter unless beta is in [0,1] and the alphas are finite.
void validate_params(const PDVParams& params);

/// Throws dimension_mismatch or schema_violation on an inconsistent bundle.
/// With `for_evaluation`, target_ids must be non-empty.
void validate_bundle(const QueryBundle& bundle, bool for_evaluation);

double dot(std::span<const float> a, std::span<const float> b);
double dot(std::span<const double> a, std::span<const double> b);
double norm(std::span<const float> v);
double norm(std::span<const double> v);

/// Unit-norm copy of `v`; the zero vector (norm <= 1e-12) is returned as is.
/// Vectors already unit to within float resolution are returned unchanged,
/// which makes normalize bit-idempotent.
Embedding normalize(const Embedding& v);

/// Final normalization of a raw composed vector back to storage precision.
/// Same zero convention as the Embedding overload.
Embedding normalize(std::span<const double> v);

RawVector compute_pdv(const Embedding& ref_text, const Embedding& composed_text);
RawVector compose_text(const Embedding& ref_text, std::span<const double> pdv, double alpha_t);
RawVector compose_image(const Embedding& ref_image, std::span<const double> pdv, double alpha_i);
RawVector fuse(std::span<const double> pdv_i, std::span<const double> pdv_t, double beta);

/// Normalizes the bundle's three inputs, builds both composed embeddings and
/// returns the normalized fusion. Throws degenerate_query if the fusion vanishes.
Embedding compute_query_embedding(const QueryBundle& bundle, const PDVParams& params);

/// Normalized inputs and residual of one bundle, computed once and reused for
/// every parameter setting. compute_query_embedding(b, p) equals
/// PreparedQuery(b).query_embedding(p) bit for bit.
class PreparedQuery {
 public:
  explicit PreparedQuery(const QueryBundle& bundle);

  Embedding query_embedding(const PDVParams& params) const;

  const Embedding& ref_text() const noexcept { return ref_text_; }
  const Embedding& composed_text() const noexcept { return composed_text_; }
  const Embedding& ref_image() const noexcept { return ref_image_; }
  const RawVector& pdv() const noexcept { return pdv_; }
  std::size_t dim() const noexcept { return pdv_.size(); }

 private:
  Embedding ref_text_;
  Embedding composed_text_;
  Embedding ref_image_;
  RawVector pdv_;
};

/// Number of PreparedQuery objects built so far in this process. Retrial paths
/// must leave it unchanged.
std::uint64_t prepared_query_count() noexcept;

}  // namespace pdv
