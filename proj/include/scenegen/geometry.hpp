#pragma once

#include <array>
#include <optional>
#include <span>

#include "scenegen/scene.hpp"

namespace scenegen {

struct OrientedBox {
  Vec2 center = Vec2::Zero();
  // Unit heading as (sin, cos) of the yaw angle.
  double sin_heading = 0.0;
  double cos_heading = 1.0;
  double half_length = 0.5;
  double half_width = 0.5;

  static OrientedBox from_token(std::span<const double, kStateDim> token);
  Vec2 axis_long() const { return {cos_heading, sin_heading}; }
  Vec2 axis_lat() const { return {-sin_heading, cos_heading}; }
  std::array<Vec2, 4> corners() const;
  bool contains(const Vec2& p) const;
};

// Separating-axis test over the four face normals of the two rectangles.
bool boxes_overlap(const OrientedBox& a, const OrientedBox& b);

struct LanePoint {
  int lane = -1;
  int point = -1;
  Vec2 position = Vec2::Zero();
  double distance = 0.0;
};

// Nearest valid lane point; ties go to the lowest (lane, point) index.
std::optional<LanePoint> nearest_lane_point(const MapSet& map, const Vec2& p);

double point_segment_distance(const Vec2& p, const Vec2& a, const Vec2& b);
// Distance to the lane polyline through its valid points.
double lane_distance(const Lane& lane, const Vec2& p);
// Index of the lane whose polyline is closest to p; -1 for an empty map.
int nearest_lane(const MapSet& map, const Vec2& p);

double wrap_angle(double a);

}  // namespace scenegen
