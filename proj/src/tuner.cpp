#include "pdv/tuner.hpp"

#include <algorithm>
#include <cmath>
#include <utility>

#include "pdv/error.hpp"

namespace pdv {

namespace {

constexpr double kReflect = 1.0;
constexpr double kExpand = 2.0;
constexpr double kContract = 0.5;
constexpr double kShrink = 0.5;

struct Vertex {
  double x;
  double fx;
};

}  // namespace

ScalarMinimum nelder_mead_scalar(const std::function<double(double)>& f, double x0, double step,
                                 double tol, int max_iter) {
  if (!(step > 0.0) || !(tol > 0.0) || !std::isfinite(x0)) {
    throw Error(ErrorCode::invalid_parameter, "nelder_mead_scalar needs finite x0, step > 0, tol > 0");
  }
  auto eval = [&f](double x) {
    const double v = f(x);
    if (!std::isfinite(v)) {
      throw Error(ErrorCode::non_finite_objective,
                  "objective is not finite at x = " + std::to_string(x));
    }
    return Vertex{x, v};
  };

  Vertex best = eval(x0);
  Vertex worst = eval(x0 + step);
  if (worst.fx < best.fx) std::swap(best, worst);

  ScalarMinimum out;
  while (true) {
    if (std::abs(worst.x - best.x) < tol && std::abs(worst.fx - best.fx) < tol) {
      out.converged = true;
      break;
    }
    if (out.iterations >= max_iter) break;
    ++out.iterations;

    // With two vertices the centroid of all but the worst is the best vertex.
    const double centroid = best.x;
    const Vertex reflected = eval(centroid + kReflect * (centroid - worst.x));
    if (reflected.fx < best.fx) {
      const Vertex expanded = eval(centroid + kExpand * (reflected.x - centroid));
      worst = expanded.fx < reflected.fx ? expanded : reflected;
    } else {
      bool shrink = false;
      if (reflected.fx < worst.fx) {
        const Vertex outside = eval(centroid + kContract * (reflected.x - centroid));
        if (outside.fx <= reflected.fx) {
          worst = outside;
        } else {
          shrink = true;
        }
      } else {
        const Vertex inside = eval(centroid + kContract * (worst.x - centroid));
        if (inside.fx < worst.fx) {
          worst = inside;
        } else {
          shrink = true;
        }
      }
      if (shrink) worst = eval(best.x + kShrink * (worst.x - best.x));
    }
    if (worst.fx < best.fx) std::swap(best, worst);
  }
  out.x = best.x;
  out.fx = best.fx;
  return out;
}

TuneResult tune_alpha_i_toward(std::span<const double> text_target, const Embedding& ref_image,
                               std::span<const double> pdv, const TunerOptions& options) {
  if (text_target.size() != ref_image.dim() || pdv.size() != ref_image.dim()) {
    throw Error(ErrorCode::dimension_mismatch, "tune_alpha_i: inconsistent dimensions");
  }
  const auto image = ref_image.values();
  auto loss = [&](double alpha) {
    double acc = 0.0;
    for (std::size_t i = 0; i < pdv.size(); ++i) {
      const double d = text_target[i] - (static_cast<double>(image[i]) + alpha * pdv[i]);
      acc += d * d;
    }
    return std::sqrt(acc);
  };

  TuneResult result;
  if (norm(pdv) <= 1e-12) {
    result.alpha_i = 1.0;
    result.loss = loss(1.0);
    result.converged = true;
    return result;
  }
  const ScalarMinimum m =
      nelder_mead_scalar(loss, options.x0, options.step, options.tol, options.max_iter);
  result.alpha_i = m.x;
  result.loss = m.fx;
  result.iterations = m.iterations;
  result.converged = m.converged;
  return result;
}

TuneResult tune_alpha_i(const PreparedQuery& prepared, double alpha_t, const TunerOptions& options) {
  if (!std::isfinite(alpha_t)) throw Error(ErrorCode::invalid_parameter, "alpha_t must be finite");
  const RawVector text_target = compose_text(prepared.ref_text(), prepared.pdv(), alpha_t);
  return tune_alpha_i_toward(text_target, prepared.ref_image(), prepared.pdv(), options);
}

TuneResult tune_alpha_i(const QueryBundle& bundle, double alpha_t, const TunerOptions& options) {
  return tune_alpha_i(PreparedQuery(bundle), alpha_t, options);
}

DatasetTuning tune_dataset(std::span<const QueryBundle> bundles, double alpha_t,
                           const TunerOptions& options) {
  if (bundles.empty()) throw Error(ErrorCode::invalid_parameter, "no queries to tune");
  DatasetTuning out;
  double total = 0.0;
  for (const auto& b : bundles) {
    TuneResult r = tune_alpha_i(b, alpha_t, options);
    total += r.alpha_i;
    if (!b.group.empty()) {
      auto it = std::find_if(out.per_group.begin(), out.per_group.end(),
                             [&](const GroupTuning& g) { return g.group == b.group; });
      if (it == out.per_group.end()) {
        out.per_group.push_back({b.group, 0, 0.0});
        it = std::prev(out.per_group.end());
      }
      ++it->num_queries;
      it->mean_alpha_i += r.alpha_i;
    }
    out.per_query.emplace_back(b.query_id, r);
  }
  for (auto& g : out.per_group) g.mean_alpha_i /= static_cast<double>(g.num_queries);
  out.mean_alpha_i = total / static_cast<double>(bundles.size());
  return out;
}

}  // namespace pdv
