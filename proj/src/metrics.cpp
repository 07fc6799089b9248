#include "scenegen/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

#include <json.hpp>

#include "scenegen/geometry.hpp"

namespace scenegen {

std::string MetricReport::to_json() const {
  nlohmann::json j;
  auto put = [&j](const char* key, const std::optional<double>& v) {
    if (v) {
      j[key] = *v;
    } else {
      j[key] = nullptr;
    }
  };
  put("ade", ade);
  put("r_road", r_road);
  put("r_col", r_col);
  put("m_k", m_k);
  j["steps"] = steps;
  j["react_steps"] = react_steps;
  return j.dump();
}

MetricReport aggregate(std::span<const MetricReport> reports) {
  MetricReport out;
  auto mean_of = [&reports](auto field) -> std::optional<double> {
    double sum = 0.0;
    int n = 0;
    for (const auto& r : reports) {
      if (const auto& v = r.*field) {
        sum += *v;
        ++n;
      }
    }
    if (n == 0) return std::nullopt;
    return sum / n;
  };
  out.ade = mean_of(&MetricReport::ade);
  out.r_road = mean_of(&MetricReport::r_road);
  out.r_col = mean_of(&MetricReport::r_col);
  out.m_k = mean_of(&MetricReport::m_k);
  if (!reports.empty()) {
    long steps = 0;
    long react = 0;
    for (const auto& r : reports) {
      steps += r.steps;
      react += r.react_steps;
    }
    out.steps = static_cast<int>(std::lround(static_cast<double>(steps) / reports.size()));
    out.react_steps = static_cast<int>(std::lround(static_cast<double>(react) / reports.size()));
  }
  return out;
}

std::optional<double> ade(const SceneTensor& generated, const SceneTensor& ground_truth,
                          const TokenMask& conditioned) {
  if (generated.agents() != ground_truth.agents() || generated.frames() != ground_truth.frames()) {
    throw std::invalid_argument("ade: scene shapes differ");
  }
  double sum = 0.0;
  size_t n = 0;
  for (int a = 0; a < generated.agents(); ++a) {
    for (int t = 0; t < generated.frames(); ++t) {
      if (!generated.valid(a, t) || !ground_truth.valid(a, t) || conditioned(a, t)) continue;
      sum += (generated.position(a, t) - ground_truth.position(a, t)).norm();
      ++n;
    }
  }
  if (n == 0) return std::nullopt;
  return sum / static_cast<double>(n);
}

namespace {

int first_valid_frame(const SceneTensor& scene, int a) {
  for (int t = 0; t < scene.frames(); ++t) {
    if (scene.valid(a, t)) return t;
  }
  return -1;
}

}  // namespace

std::optional<double> offroad_rate(const SceneTensor& scene, const MapSet& map,
                                   double lateral_threshold) {
  if (map.empty()) return std::nullopt;
  int vehicles = 0;
  int offenders = 0;
  for (int a = 0; a < scene.agents(); ++a) {
    const int first = first_valid_frame(scene, a);
    if (first < 0) continue;
    ++vehicles;
    const int lane = nearest_lane(map, scene.position(a, first));
    for (int t = first; t < scene.frames(); ++t) {
      if (!scene.valid(a, t)) continue;
      if (lane_distance(map.lanes[lane], scene.position(a, t)) > lateral_threshold) {
        ++offenders;
        break;
      }
    }
  }
  if (vehicles == 0) return std::nullopt;
  return 100.0 * offenders / vehicles;
}

double collision_rate(const SceneTensor& scene) {
  const int A = scene.agents();
  std::vector<bool> present(A, false);
  std::vector<bool> collided(A, false);
  std::vector<OrientedBox> boxes(A);
  for (int t = 0; t < scene.frames(); ++t) {
    for (int a = 0; a < A; ++a) {
      if (!scene.valid(a, t)) continue;
      present[a] = true;
      boxes[a] = OrientedBox::from_token(scene.token(a, t));
    }
    for (int i = 0; i < A; ++i) {
      if (!scene.valid(i, t)) continue;
      for (int j = i + 1; j < A; ++j) {
        if (!scene.valid(j, t)) continue;
        if (boxes_overlap(boxes[i], boxes[j])) collided[i] = collided[j] = true;
      }
    }
  }
  int vehicles = 0;
  int hits = 0;
  for (int a = 0; a < A; ++a) {
    vehicles += present[a] ? 1 : 0;
    hits += collided[a] ? 1 : 0;
  }
  return vehicles == 0 ? 0.0 : 100.0 * hits / vehicles;
}

std::optional<InstabilityParts> instability_parts(const SceneTensor& scene, double dt) {
  InstabilityParts parts;
  const double inv_dt2 = 1.0 / (dt * dt);
  for (int a = 0; a < scene.agents(); ++a) {
    int t = 0;
    while (t < scene.frames()) {
      if (!scene.valid(a, t)) {
        ++t;
        continue;
      }
      const int start = t;
      while (t < scene.frames() && scene.valid(a, t)) ++t;
      const int n = t - start;
      if (n < 4) continue;

      std::vector<double> tan(n), nor(n);
      for (int i = 0; i < n; ++i) {
        const int c = start + std::clamp(i, 1, n - 2);
        const Vec2 acc = (scene.position(a, c - 1) - 2.0 * scene.position(a, c) +
                          scene.position(a, c + 1)) * inv_dt2;
        // End frames repeat the neighbouring interior sample, heading included.
        Vec2 h(scene.at(a, c, kCosHeading), scene.at(a, c, kSinHeading));
        const double hn = h.norm();
        h = hn > 1e-9 ? Vec2(h / hn) : Vec2(1.0, 0.0);
        tan[i] = acc.dot(h);
        nor[i] = acc.dot(Vec2(-h.y(), h.x()));
      }
      for (int i = 0; i < n; ++i) {
        const int lo = i == 0 ? 0 : i - 1;
        const int hi = i == 0 ? 1 : i;
        parts.tangential_accel += std::abs(tan[i]);
        parts.normal_accel += std::abs(nor[i]);
        parts.tangential_jerk += std::abs(tan[hi] - tan[lo]) / dt;
        parts.normal_jerk += std::abs(nor[hi] - nor[lo]) / dt;
      }
      parts.samples += static_cast<size_t>(n);
    }
  }
  if (parts.samples == 0) return std::nullopt;
  const double inv = 1.0 / static_cast<double>(parts.samples);
  parts.tangential_accel *= inv;
  parts.normal_accel *= inv;
  parts.tangential_jerk *= inv;
  parts.normal_jerk *= inv;
  return parts;
}

std::optional<double> instability(const SceneTensor& scene, double dt) {
  const auto parts = instability_parts(scene, dt);
  if (!parts) return std::nullopt;
  return parts->composite();
}

}  // namespace scenegen
