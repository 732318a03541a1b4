#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "pdv/core.hpp"

namespace pdv {

struct ScalarMinimum {
  double x = 0.0;
  double fx = 0.0;
  int iterations = 0;
  bool converged = false;
};

/// One-dimensional Nelder-Mead over the simplex {x0, x0 + step} with
/// reflection 1, expansion 2, contraction 0.5 and shrink 0.5. Converged once
/// both the simplex width and the spread of f across it drop below `tol`.
/// Throws non_finite_objective if f yields NaN or Inf at any probe.
ScalarMinimum nelder_mead_scalar(const std::function<double(double)>& f, double x0, double step,
                                 double tol, int max_iter);

struct TunerOptions {
  double x0 = 1.0;
  double step = 0.5;
  double tol = 1e-6;
  int max_iter = 200;
};

struct TuneResult {
  double alpha_i = 1.0;
  double loss = 0.0;  // Euclidean distance between the composed image and text vectors
  int iterations = 0;
  bool converged = false;
};

/// Minimizes ||text_target - (ref_image + alpha * pdv)|| over alpha.
/// `ref_image` is expected normalized; nothing here re-normalizes.
/// A zero residual yields alpha_i = 1 with converged = true.
TuneResult tune_alpha_i_toward(std::span<const double> text_target, const Embedding& ref_image,
                               std::span<const double> pdv, const TunerOptions& options = {});

/// Tunes alpha_i for one bundle with the composed text embedding fixed at alpha_t.
TuneResult tune_alpha_i(const QueryBundle& bundle, double alpha_t, const TunerOptions& options = {});
TuneResult tune_alpha_i(const PreparedQuery& prepared, double alpha_t,
                        const TunerOptions& options = {});

struct GroupTuning {
  std::string group;
  std::size_t num_queries = 0;
  double mean_alpha_i = 0.0;
};

struct DatasetTuning {
  std::vector<std::pair<std::string, TuneResult>> per_query;
  double mean_alpha_i = 0.0;
  std::vector<GroupTuning> per_group;
};

/// Per-query tuning plus dataset and per-group means of the tuned alpha_i.
DatasetTuning tune_dataset(std::span<const QueryBundle> bundles, double alpha_t,
                           const TunerOptions& options = {});

}  // namespace pdv
