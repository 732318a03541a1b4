#include "pdv/geosim.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include "pdv/error.hpp"

namespace pdv {

namespace {

constexpr double kZeroNorm = 1e-12;

double to_rad(double deg) { return deg * std::numbers::pi / 180.0; }
double to_deg(double rad) { return rad * 180.0 / std::numbers::pi; }

// Angle between two non-zero vectors, accurate near 0 and pi.
double angle_between(std::span<const double> a, std::span<const double> b) {
  const double na = norm(a);
  const double nb = norm(b);
  double diff = 0.0;
  double sum = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double u = a[i] / na;
    const double v = b[i] / nb;
    diff += (u - v) * (u - v);
    sum += (u + v) * (u + v);
  }
  return 2.0 * std::atan2(std::sqrt(diff), std::sqrt(sum));
}

struct Plane {
  RawVector ref;
  RawVector target;
  RawVector ideal_dir;  // unit (target - ref)
  double ideal_norm;
};

Plane make_plane(double theta0_deg, std::size_t dim) {
  Plane p;
  p.ref.assign(dim, 0.0);
  p.target.assign(dim, 0.0);
  p.ref[0] = 1.0;
  p.target[0] = std::cos(to_rad(theta0_deg));
  p.target[1] = std::sin(to_rad(theta0_deg));
  p.ideal_dir.resize(dim);
  for (std::size_t i = 0; i < dim; ++i) p.ideal_dir[i] = p.target[i] - p.ref[i];
  p.ideal_norm = norm(p.ideal_dir);
  for (auto& v : p.ideal_dir) v /= p.ideal_norm;
  return p;
}

double theta_with_perp(const Plane& plane, std::span<const double> perp, double mag_ratio,
                       double phi_deg, double alpha) {
  const double c = std::cos(to_rad(phi_deg));
  const double s = std::sin(to_rad(phi_deg));
  const double scale = mag_ratio * plane.ideal_norm;
  RawVector composed(plane.ref.size());
  for (std::size_t i = 0; i < composed.size(); ++i) {
    const double residual = scale * (c * plane.ideal_dir[i] + s * perp[i]);
    composed[i] = plane.ref[i] + alpha * residual;
  }
  if (norm(composed) <= kZeroNorm) {
    throw Error(ErrorCode::degenerate_composed, "composed vector vanishes");
  }
  return to_deg(angle_between(composed, plane.target));
}

RawVector axis_perp(std::size_t dim) {
  RawVector perp(dim, 0.0);
  perp[2] = 1.0;
  return perp;
}

// Uniform unit direction orthogonal to span{e0, e1}.
RawVector random_perp(std::size_t dim, std::mt19937_64& rng) {
  std::normal_distribution<double> gauss;
  RawVector perp(dim, 0.0);
  double n = 0.0;
  while (n <= kZeroNorm) {
    for (std::size_t i = 2; i < dim; ++i) perp[i] = gauss(rng);
    n = norm(perp);
  }
  for (auto& v : perp) v /= n;
  return perp;
}

void check_point(double theta0_deg, double mag_ratio, double phi_deg, double alpha, int dim) {
  if (!std::isfinite(theta0_deg) || !std::isfinite(phi_deg) || !std::isfinite(alpha) ||
      !std::isfinite(mag_ratio)) {
    throw Error(ErrorCode::invalid_parameter, "simulation parameters must be finite");
  }
  if (!(mag_ratio > 0.0)) throw Error(ErrorCode::invalid_parameter, "mag_ratio must be > 0");
  if (!(theta0_deg > 0.0 && theta0_deg < 180.0)) {
    throw Error(ErrorCode::invalid_parameter, "theta0 must lie in (0, 180) degrees");
  }
  if (dim < 3) throw Error(ErrorCode::invalid_parameter, "simulation needs dim >= 3");
}

}  // namespace

void validate_sim_config(const SimConfig& config) {
  check_point(config.theta0_deg, config.mag_ratio, 0.0, 0.0, config.dim);
  if (config.phi_grid_deg.empty() || config.alpha_grid.empty()) {
    throw Error(ErrorCode::invalid_parameter, "phi and alpha grids must be non-empty");
  }
  const auto finite = [](double v) { return std::isfinite(v); };
  if (!std::all_of(config.phi_grid_deg.begin(), config.phi_grid_deg.end(), finite) ||
      !std::all_of(config.alpha_grid.begin(), config.alpha_grid.end(), finite)) {
    throw Error(ErrorCode::invalid_parameter, "grid values must be finite");
  }
  if (config.random_completions < 0) {
    throw Error(ErrorCode::invalid_parameter, "random_completions must be >= 0");
  }
}

double simulate_theta(double theta0_deg, double mag_ratio, double phi_deg, double alpha, int dim) {
  check_point(theta0_deg, mag_ratio, phi_deg, alpha, dim);
  const auto d = static_cast<std::size_t>(dim);
  const Plane plane = make_plane(theta0_deg, d);
  return theta_with_perp(plane, axis_perp(d), mag_ratio, phi_deg, alpha);
}

std::vector<HeatmapCell> theta_heatmap(const SimConfig& config) {
  validate_sim_config(config);
  const auto dim = static_cast<std::size_t>(config.dim);
  const Plane plane = make_plane(config.theta0_deg, dim);

  std::vector<RawVector> perps;
  if (config.random_completions > 0) {
    std::mt19937_64 rng(config.seed);
    for (int i = 0; i < config.random_completions; ++i) perps.push_back(random_perp(dim, rng));
  } else {
    perps.push_back(axis_perp(dim));
  }

  std::vector<HeatmapCell> cells;
  cells.reserve(config.phi_grid_deg.size() * config.alpha_grid.size());
  for (const double phi : config.phi_grid_deg) {
    for (const double alpha : config.alpha_grid) {
      HeatmapCell cell{phi, alpha, 0.0, true};
      try {
        double sum = 0.0;
        for (const auto& perp : perps) sum += theta_with_perp(plane, perp, config.mag_ratio, phi, alpha);
        cell.theta_deg = sum / static_cast<double>(perps.size());
      } catch (const Error& e) {
        if (e.code() != ErrorCode::degenerate_composed) throw;
        cell.valid = false;
        cell.theta_deg = std::nan("");
      }
      cells.push_back(cell);
    }
  }
  return cells;
}

std::vector<double> make_grid(double from, double to, double step) {
  if (!std::isfinite(from) || !std::isfinite(to) || !std::isfinite(step) || !(step > 0.0) ||
      to < from) {
    throw Error(ErrorCode::invalid_parameter, "grid needs finite from <= to and step > 0");
  }
  const auto count = static_cast<std::size_t>(std::floor((to - from) / step + 1e-9)) + 1;
  std::vector<double> grid(count);
  for (std::size_t i = 0; i < count; ++i) grid[i] = from + static_cast<double>(i) * step;
  return grid;
}

double measure_phi(const QueryBundle& bundle, const Embedding& target_embedding) {
  const PreparedQuery prepared(bundle);
  if (target_embedding.dim() != prepared.dim()) {
    throw Error(ErrorCode::dimension_mismatch, "target embedding dimension does not match bundle");
  }
  const RawVector& prompt_residual = prepared.pdv();
  const Embedding target = normalize(target_embedding);
  const RawVector ideal_residual = compute_pdv(prepared.ref_text(), target);
  if (norm(prompt_residual) <= kZeroNorm) {
    throw Error(ErrorCode::zero_pdv, "query " + bundle.query_id + ": prompt residual is zero");
  }
  if (norm(ideal_residual) <= kZeroNorm) {
    throw Error(ErrorCode::zero_gt, "query " + bundle.query_id + ": target equals reference");
  }
  return to_deg(angle_between(prompt_residual, ideal_residual));
}

namespace {

PhiSummary summarize(std::string group, std::vector<double> values) {
  PhiSummary s;
  s.group = std::move(group);
  s.count = values.size();
  double sum = 0.0;
  for (const double v : values) sum += v;
  s.mean_deg = sum / static_cast<double>(values.size());
  double sq = 0.0;
  for (const double v : values) sq += (v - s.mean_deg) * (v - s.mean_deg);
  s.stddev_deg = std::sqrt(sq / static_cast<double>(values.size()));
  std::sort(values.begin(), values.end());
  const std::size_t mid = values.size() / 2;
  s.median_deg = values.size() % 2 == 1 ? values[mid] : 0.5 * (values[mid - 1] + values[mid]);
  return s;
}

}  // namespace

PhiReport phi_report(std::span<const QueryBundle> bundles, std::span<const Embedding> targets) {
  if (bundles.size() != targets.size()) {
    throw Error(ErrorCode::invalid_parameter, "phi_report needs one target per bundle");
  }
  if (bundles.empty()) throw Error(ErrorCode::invalid_parameter, "phi_report needs >= 1 bundle");

  PhiReport report;
  std::vector<double> all;
  std::vector<std::pair<std::string, std::vector<double>>> groups;
  for (std::size_t i = 0; i < bundles.size(); ++i) {
    double phi = 0.0;
    try {
      phi = measure_phi(bundles[i], targets[i]);
    } catch (const Error& e) {
      if (e.code() != ErrorCode::zero_pdv && e.code() != ErrorCode::zero_gt) throw;
      ++report.skipped;
      continue;
    }
    all.push_back(phi);
    const std::string& g = bundles[i].group;
    if (g.empty()) continue;
    auto it = std::find_if(groups.begin(), groups.end(), [&](const auto& e) { return e.first == g; });
    if (it == groups.end()) {
      groups.push_back({g, {phi}});
    } else {
      it->second.push_back(phi);
    }
  }
  if (all.empty()) {
    throw Error(ErrorCode::all_bundles_degenerate, "no bundle has a measurable phi angle");
  }
  report.overall = summarize("", std::move(all));
  for (auto& [name, values] : groups) report.per_group.push_back(summarize(name, std::move(values)));
  return report;
}

}  // namespace pdv
