#pragma once

#include <optional>
#include <span>
#include <string>

#include "scenegen/scene.hpp"

namespace scenegen {

struct MetricReport {
  std::optional<double> ade;     // meters
  std::optional<double> r_road;  // percent
  std::optional<double> r_col;   // percent
  std::optional<double> m_k;     // mean of |a_tan|, |a_norm|, |j_tan|, |j_norm|
  int steps = 0;
  int react_steps = 0;

  std::string to_json() const;
};

// Mean over per-scenario reports of each present field.
MetricReport aggregate(std::span<const MetricReport> reports);

// Mean position error over tokens valid in both scenes and not conditioned.
std::optional<double> ade(const SceneTensor& generated, const SceneTensor& ground_truth,
                          const TokenMask& conditioned);

// A vehicle is off-road if at any valid frame its distance to the centreline it was nearest
// to at its first valid frame exceeds the threshold. Percent of valid vehicles.
std::optional<double> offroad_rate(const SceneTensor& scene, const MapSet& map,
                                   double lateral_threshold = 2.0);

// Percent of valid vehicles whose box overlaps another at some frame.
double collision_rate(const SceneTensor& scene);

struct InstabilityParts {
  double tangential_accel = 0.0;
  double normal_accel = 0.0;
  double tangential_jerk = 0.0;
  double normal_jerk = 0.0;
  size_t samples = 0;
  double composite() const {
    return 0.25 * (tangential_accel + normal_accel + tangential_jerk + normal_jerk);
  }
};

// Accelerations are second differences of position (the one-sided stencil repeats the
// nearest interior value at run ends); jerk is the backward difference of each
// acceleration component (forward at the first frame). Components are taken along and
// across the heading channels. Runs shorter than four valid frames are skipped.
std::optional<InstabilityParts> instability_parts(const SceneTensor& scene, double dt = 0.5);
std::optional<double> instability(const SceneTensor& scene, double dt = 0.5);

}  // namespace scenegen
