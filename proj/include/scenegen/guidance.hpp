#pragma once

#include <utility>
#include <vector>

#include "scenegen/geometry.hpp"
#include "scenegen/scene.hpp"

namespace scenegen {

struct GuidanceConfig {
  double lambda_total = 0.2;
  double d_th = 2.0;
  bool collision = true;
  bool comfort = true;
  bool on_road = true;

  int active_count() const { return int(collision) + int(comfort) + int(on_road); }
  // The total step size is shared evenly among the enabled constraints.
  double lambda_each() const { return active_count() == 0 ? 0.0 : lambda_total / active_count(); }
  static GuidanceConfig disabled() { return {0.2, 2.0, false, false, false}; }
};

// Agent pairs that are allowed to overlap (e.g. an attacker and its target).
class PairExemptions {
 public:
  void add(int i, int j) { pairs_.emplace_back(std::min(i, j), std::max(i, j)); }
  bool contains(int i, int j) const;
  bool empty() const { return pairs_.empty(); }

 private:
  std::vector<std::pair<int, int>> pairs_;
};

// All operators work on metric positions and only ever write the x/y channels.
// Tokens set in `frozen` act as obstacles or neighbours but never move.

// Per frame, every overlapping pair pushes its members apart along the centre line by
// lambda each; updates use pre-update positions.
SceneTensor apply_collision(const SceneTensor& scene, double lambda,
                            const TokenMask* frozen = nullptr,
                            const PairExemptions* exemptions = nullptr);

// Moves interior points of each run of >= 3 valid frames toward the neighbour average:
// x += lambda * (x[t-1] - 2 x[t] + x[t+1]) / 2. Run endpoints stay fixed.
SceneTensor apply_comfort(const SceneTensor& scene, double lambda,
                          const TokenMask* frozen = nullptr);

// Pulls tokens farther than d_th from their nearest lane point toward it by lambda.
// With an empty map nothing moves and `map_missing` is raised.
SceneTensor apply_on_road(const SceneTensor& scene, const MapSet& map, double lambda,
                          double d_th, const TokenMask* frozen = nullptr,
                          bool* map_missing = nullptr);

// collision -> comfort -> on_road, each enabled one with lambda_total / |enabled|.
SceneTensor apply_guidance(const SceneTensor& scene, const MapSet& map,
                           const GuidanceConfig& config, const TokenMask& conditioned,
                           const PairExemptions* exemptions = nullptr);

// Sum over interior points of ||(x[t-1] - 2 x[t] + x[t+1]) / 2||^2.
double second_difference_energy(const SceneTensor& scene);

}  // namespace scenegen
