#include "scenegen/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

namespace scenegen {

OrientedBox OrientedBox::from_token(std::span<const double, kStateDim> token) {
  OrientedBox box;
  box.center = {token[kX], token[kY]};
  const double n = std::hypot(token[kSinHeading], token[kCosHeading]);
  if (n > 1e-6) {
    box.sin_heading = token[kSinHeading] / n;
    box.cos_heading = token[kCosHeading] / n;
  }
  box.half_length = 0.5 * token[kLength];
  box.half_width = 0.5 * token[kWidth];
  return box;
}

std::array<Vec2, 4> OrientedBox::corners() const {
  const Vec2 u = axis_long() * half_length;
  const Vec2 v = axis_lat() * half_width;
  return {center + u + v, center - u + v, center - u - v, center + u - v};
}

bool OrientedBox::contains(const Vec2& p) const {
  const Vec2 d = p - center;
  return std::abs(d.dot(axis_long())) <= half_length && std::abs(d.dot(axis_lat())) <= half_width;
}

namespace {

double projected_radius(const OrientedBox& b, const Vec2& axis) {
  return b.half_length * std::abs(b.axis_long().dot(axis)) +
         b.half_width * std::abs(b.axis_lat().dot(axis));
}

}  // namespace

bool boxes_overlap(const OrientedBox& a, const OrientedBox& b) {
  const Vec2 d = b.center - a.center;
  const std::array<Vec2, 4> axes = {a.axis_long(), a.axis_lat(), b.axis_long(), b.axis_lat()};
  for (const Vec2& axis : axes) {
    const double dist = std::abs(d.dot(axis));
    if (dist > projected_radius(a, axis) + projected_radius(b, axis)) return false;
  }
  return true;
}

std::optional<LanePoint> nearest_lane_point(const MapSet& map, const Vec2& p) {
  std::optional<LanePoint> best;
  double best_sq = std::numeric_limits<double>::infinity();
  for (size_t l = 0; l < map.lanes.size(); ++l) {
    const Lane& lane = map.lanes[l];
    for (size_t i = 0; i < lane.points.size(); ++i) {
      if (!lane.point_is_valid(i)) continue;
      const double sq = (lane.points[i] - p).squaredNorm();
      if (sq < best_sq) {
        best_sq = sq;
        best = LanePoint{static_cast<int>(l), static_cast<int>(i), lane.points[i], 0.0};
      }
    }
  }
  if (best) best->distance = std::sqrt(best_sq);
  return best;
}

double point_segment_distance(const Vec2& p, const Vec2& a, const Vec2& b) {
  const Vec2 ab = b - a;
  const double len_sq = ab.squaredNorm();
  if (len_sq <= 0.0) return (p - a).norm();
  const double u = std::clamp((p - a).dot(ab) / len_sq, 0.0, 1.0);
  return (a + u * ab - p).norm();
}

double lane_distance(const Lane& lane, const Vec2& p) {
  double best = std::numeric_limits<double>::infinity();
  const Vec2* prev = nullptr;
  for (size_t i = 0; i < lane.points.size(); ++i) {
    if (!lane.point_is_valid(i)) {
      prev = nullptr;
      continue;
    }
    const Vec2& cur = lane.points[i];
    best = std::min(best, prev ? point_segment_distance(p, *prev, cur) : (cur - p).norm());
    prev = &cur;
  }
  return best;
}

int nearest_lane(const MapSet& map, const Vec2& p) {
  int best = -1;
  double best_d = std::numeric_limits<double>::infinity();
  for (size_t l = 0; l < map.lanes.size(); ++l) {
    const double d = lane_distance(map.lanes[l], p);
    if (d < best_d) {
      best_d = d;
      best = static_cast<int>(l);
    }
  }
  return best;
}

double wrap_angle(double a) {
  a = std::fmod(a + std::numbers::pi, 2.0 * std::numbers::pi);
  if (a < 0) a += 2.0 * std::numbers::pi;
  return a - std::numbers::pi;
}

}  // namespace scenegen
