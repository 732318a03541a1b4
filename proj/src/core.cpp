#include "pdv/core.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <string>

#include "pdv/error.hpp"

namespace pdv {

namespace {

constexpr double kZeroNorm = 1e-12;
// A float-rounded unit vector has |norm - 1| <= 2^-24; 2^-22 leaves headroom.
constexpr double kUnitSlack = 0x1p-22;

std::atomic<std::uint64_t> g_prepared_queries{0};

void require_same_dim(std::size_t a, std::size_t b, const char* what) {
  if (a != b) {
    throw Error(ErrorCode::dimension_mismatch,
                std::string(what) + ": dimension " + std::to_string(a) + " vs " + std::to_string(b));
  }
}

RawVector affine(std::span<const float> base, std::span<const double> direction, double scale) {
  require_same_dim(base.size(), direction.size(), "compose");
  RawVector out(base.size());
  for (std::size_t i = 0; i < base.size(); ++i) {
    out[i] = static_cast<double>(base[i]) + scale * direction[i];
  }
  return out;
}

}  // namespace

Embedding::Embedding(std::vector<float> values) : values_(std::move(values)) {
  if (values_.empty()) {
    throw Error(ErrorCode::invalid_embedding, "embedding must have dim >= 1");
  }
  for (std::size_t i = 0; i < values_.size(); ++i) {
    if (!std::isfinite(values_[i])) {
      throw Error(ErrorCode::invalid_embedding,
                  "non-finite embedding value at coordinate " + std::to_string(i));
    }
  }
}

void validate_params(const PDVParams& params) {
  if (!std::isfinite(params.alpha_t) || !std::isfinite(params.alpha_i)) {
    throw Error(ErrorCode::invalid_parameter, "alpha_t and alpha_i must be finite");
  }
  if (!(params.beta >= 0.0 && params.beta <= 1.0)) {
    throw Error(ErrorCode::invalid_parameter,
                "beta must lie in [0, 1], got " + std::to_string(params.beta));
  }
}

void validate_bundle(const QueryBundle& bundle, bool for_evaluation) {
  const std::size_t dim = bundle.ref_text.dim();
  if (dim == 0) {
    throw Error(ErrorCode::invalid_embedding, "query " + bundle.query_id + ": empty ref_text");
  }
  require_same_dim(dim, bundle.composed_text.dim(), "bundle composed_text");
  require_same_dim(dim, bundle.ref_image.dim(), "bundle ref_image");
  if (for_evaluation && bundle.target_ids.empty()) {
    throw Error(ErrorCode::schema_violation, "query " + bundle.query_id + ": target_ids is empty");
  }
  if (bundle.subset_ids) {
    const auto& subset = *bundle.subset_ids;
    for (const auto& target : bundle.target_ids) {
      if (std::find(subset.begin(), subset.end(), target) == subset.end()) {
        throw Error(ErrorCode::schema_violation,
                    "query " + bundle.query_id + ": target '" + target + "' missing from subset_ids");
      }
    }
  }
}

double dot(std::span<const float> a, std::span<const float> b) {
  require_same_dim(a.size(), b.size(), "dot");
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    acc += static_cast<double>(a[i]) * static_cast<double>(b[i]);
  }
  return acc;
}

double dot(std::span<const double> a, std::span<const double> b) {
  require_same_dim(a.size(), b.size(), "dot");
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
  return acc;
}

double norm(std::span<const float> v) { return std::sqrt(dot(v, v)); }
double norm(std::span<const double> v) { return std::sqrt(dot(v, v)); }

Embedding normalize(const Embedding& v) {
  const double n = norm(v.values());
  if (n <= kZeroNorm || std::abs(n - 1.0) <= kUnitSlack) return v;
  std::vector<float> out(v.dim());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = static_cast<float>(static_cast<double>(v[i]) / n);
  }
  return Embedding(std::move(out));
}

Embedding normalize(std::span<const double> v) {
  std::vector<float> rounded(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (!std::isfinite(v[i])) {
      throw Error(ErrorCode::invalid_embedding, "non-finite value in composed vector");
    }
    rounded[i] = static_cast<float>(v[i]);
  }
  // Rounding to storage precision first keeps the output identical to
  // normalize(Embedding) whenever the raw vector is exactly representable.
  return normalize(Embedding(std::move(rounded)));
}

RawVector compute_pdv(const Embedding& ref_text, const Embedding& composed_text) {
  require_same_dim(ref_text.dim(), composed_text.dim(), "compute_pdv");
  RawVector out(ref_text.dim());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = static_cast<double>(composed_text[i]) - static_cast<double>(ref_text[i]);
  }
  return out;
}

RawVector compose_text(const Embedding& ref_text, std::span<const double> pdv, double alpha_t) {
  return affine(ref_text.values(), pdv, alpha_t);
}

RawVector compose_image(const Embedding& ref_image, std::span<const double> pdv, double alpha_i) {
  return affine(ref_image.values(), pdv, alpha_i);
}

RawVector fuse(std::span<const double> pdv_i, std::span<const double> pdv_t, double beta) {
  if (!(beta >= 0.0 && beta <= 1.0)) {
    throw Error(ErrorCode::invalid_parameter,
                "beta must lie in [0, 1], got " + std::to_string(beta));
  }
  require_same_dim(pdv_i.size(), pdv_t.size(), "fuse");
  RawVector out(pdv_i.size());
  const double image_weight = 1.0 - beta;
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = image_weight * pdv_i[i] + beta * pdv_t[i];
  }
  return out;
}

PreparedQuery::PreparedQuery(const QueryBundle& bundle) {
  validate_bundle(bundle, false);
  ref_text_ = normalize(bundle.ref_text);
  composed_text_ = normalize(bundle.composed_text);
  ref_image_ = normalize(bundle.ref_image);
  pdv_ = compute_pdv(ref_text_, composed_text_);
  g_prepared_queries.fetch_add(1, std::memory_order_relaxed);
}

std::uint64_t prepared_query_count() noexcept {
  return g_prepared_queries.load(std::memory_order_relaxed);
}

Embedding PreparedQuery::query_embedding(const PDVParams& params) const {
  validate_params(params);
  const RawVector image_side = compose_image(ref_image_, pdv_, params.alpha_i);
  const RawVector text_side = compose_text(ref_text_, pdv_, params.alpha_t);
  const RawVector fused = fuse(image_side, text_side, params.beta);
  Embedding q = normalize(fused);
  if (norm(q.values()) <= kZeroNorm) {
    throw Error(ErrorCode::degenerate_query,
                "composed query vanishes: text and image compositions cancel");
  }
  return q;
}

Embedding compute_query_embedding(const QueryBundle& bundle, const PDVParams& params) {
  return PreparedQuery(bundle).query_embedding(params);
}

}  // namespace pdv
