#pragma once

// Angle geometry of composed queries. theta is the angle between the composed
// embedding and the target; phi is the angle between the prompt residual and
// the ideal (reference-to-target) residual.

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "pdv/core.hpp"

namespace pdv {

struct SimConfig {
  double theta0_deg = 45.0;  // reference/target angle
  double mag_ratio = 0.5;    // |prompt residual| / |ideal residual|
  std::vector<double> phi_grid_deg;
  std::vector<double> alpha_grid;
  int dim = 3;
  // Average each cell over random out-of-plane directions instead of the fixed axis.
  int random_completions = 0;
  std::uint64_t seed = 0;
};

struct HeatmapCell {
  double phi_deg = 0.0;
  double alpha = 0.0;
  double theta_deg = 0.0;
  bool valid = true;
};

void validate_sim_config(const SimConfig& config);

/// theta in degrees for one (phi, alpha) point. Throws degenerate_composed
/// when the composed vector vanishes.
double simulate_theta(double theta0_deg, double mag_ratio, double phi_deg, double alpha,
                      int dim = 3);

/// Row-major by phi, then alpha. Degenerate cells are marked invalid.
std::vector<HeatmapCell> theta_heatmap(const SimConfig& config);

/// Inclusive arithmetic grid from:to:step, robust to floating-point drift.
std::vector<double> make_grid(double from, double to, double step);

/// phi in degrees between the bundle's prompt residual and
/// normalize(target) - normalize(ref_text). Throws zero_pdv / zero_gt.
double measure_phi(const QueryBundle& bundle, const Embedding& target_embedding);

struct PhiSummary {
  std::string group;  // empty for the overall summary
  std::size_t count = 0;
  double mean_deg = 0.0;
  double median_deg = 0.0;
  double stddev_deg = 0.0;  // population standard deviation
};

struct PhiReport {
  PhiSummary overall;
  std::vector<PhiSummary> per_group;
  std::size_t skipped = 0;
};

/// Aggregates measure_phi; bundles with a zero residual are skipped and counted.
/// Throws all_bundles_degenerate when nothing is measurable.
PhiReport phi_report(std::span<const QueryBundle> bundles, std::span<const Embedding> targets);

}  // namespace pdv
