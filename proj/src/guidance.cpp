#include "scenegen/guidance.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace scenegen {

bool PairExemptions::contains(int i, int j) const {
  const std::pair<int, int> key{std::min(i, j), std::max(i, j)};
  return std::find(pairs_.begin(), pairs_.end(), key) != pairs_.end();
}

namespace {

bool is_frozen(const TokenMask* frozen, int a, int t) { return frozen && (*frozen)(a, t); }

// Coincident centres: fixed direction from the pair index (golden-angle sequence).
Vec2 tie_break_direction(int i, int j, int agents) {
  const int lo = std::min(i, j);
  const int hi = std::max(i, j);
  const double angle = 2.399963229728653 * static_cast<double>(lo * agents + hi);
  const Vec2 d(std::cos(angle), std::sin(angle));
  return i == lo ? d : Vec2(-d);
}

}  // namespace

SceneTensor apply_collision(const SceneTensor& scene, double lambda, const TokenMask* frozen,
                            const PairExemptions* exemptions) {
  SceneTensor out = scene;
  const int A = scene.agents();
  std::vector<OrientedBox> boxes(A);
  for (int t = 0; t < scene.frames(); ++t) {
    for (int a = 0; a < A; ++a) {
      if (scene.valid(a, t)) boxes[a] = OrientedBox::from_token(scene.token(a, t));
    }
    for (int i = 0; i < A; ++i) {
      if (!scene.valid(i, t) || is_frozen(frozen, i, t)) continue;
      Vec2 push = Vec2::Zero();
      for (int j = 0; j < A; ++j) {
        if (j == i || !scene.valid(j, t)) continue;
        if (exemptions && exemptions->contains(i, j)) continue;
        if (!boxes_overlap(boxes[i], boxes[j])) continue;
        const Vec2 d = boxes[i].center - boxes[j].center;
        const double n = d.norm();
        push += n < 1e-9 ? tie_break_direction(i, j, A) : Vec2(d / n);
      }
      if (push.x() != 0.0 || push.y() != 0.0) {
        out.set_position(i, t, scene.position(i, t) + lambda * push);
      }
    }
  }
  return out;
}

SceneTensor apply_comfort(const SceneTensor& scene, double lambda, const TokenMask* frozen) {
  SceneTensor out = scene;
  for (int a = 0; a < scene.agents(); ++a) {
    for (int t = 1; t + 1 < scene.frames(); ++t) {
      if (!scene.valid(a, t - 1) || !scene.valid(a, t) || !scene.valid(a, t + 1)) continue;
      if (is_frozen(frozen, a, t)) continue;
      const Vec2 half_d2 =
          0.5 * (scene.position(a, t - 1) - 2.0 * scene.position(a, t) + scene.position(a, t + 1));
      out.set_position(a, t, scene.position(a, t) + lambda * half_d2);
    }
  }
  return out;
}

SceneTensor apply_on_road(const SceneTensor& scene, const MapSet& map, double lambda,
                          double d_th, const TokenMask* frozen, bool* map_missing) {
  SceneTensor out = scene;
  if (map.empty()) {
    if (map_missing) *map_missing = true;
    return out;
  }
  if (map_missing) *map_missing = false;
  for (int a = 0; a < scene.agents(); ++a) {
    for (int t = 0; t < scene.frames(); ++t) {
      if (!scene.valid(a, t) || is_frozen(frozen, a, t)) continue;
      const Vec2 p = scene.position(a, t);
      const auto nearest = nearest_lane_point(map, p);
      if (nearest && nearest->distance > d_th) {
        out.set_position(a, t, p + lambda * (nearest->position - p));
      }
    }
  }
  return out;
}

SceneTensor apply_guidance(const SceneTensor& scene, const MapSet& map,
                           const GuidanceConfig& config, const TokenMask& conditioned,
                           const PairExemptions* exemptions) {
  SceneTensor out = scene;
  const double lambda = config.lambda_each();
  if (config.collision) out = apply_collision(out, lambda, &conditioned, exemptions);
  if (config.comfort) out = apply_comfort(out, lambda, &conditioned);
  if (config.on_road) out = apply_on_road(out, map, lambda, config.d_th, &conditioned);
  return out;
}

double second_difference_energy(const SceneTensor& scene) {
  double e = 0.0;
  for (int a = 0; a < scene.agents(); ++a) {
    for (int t = 1; t + 1 < scene.frames(); ++t) {
      if (!scene.valid(a, t - 1) || !scene.valid(a, t) || !scene.valid(a, t + 1)) continue;
      const Vec2 h =
          0.5 * (scene.position(a, t - 1) - 2.0 * scene.position(a, t) + scene.position(a, t + 1));
      e += h.squaredNorm();
    }
  }
  return e;
}

}  // namespace scenegen
