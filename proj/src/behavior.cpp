#include "scenegen/behavior.hpp"

#include <cmath>
#include <limits>
#include <numbers>
#include <vector>

#include <json.hpp>

#include "scenegen/geometry.hpp"

namespace scenegen {

std::string to_string(Behavior b) {
  switch (b) {
    case Behavior::kIntersectionPassing: return "intersection_passing";
    case Behavior::kLeftTurn: return "left_turn";
    case Behavior::kRightTurn: return "right_turn";
    case Behavior::kLeftLaneChange: return "left_lane_change";
    case Behavior::kRightLaneChange: return "right_lane_change";
    case Behavior::kUTurn: return "u_turn";
    case Behavior::kStop: return "stop";
    case Behavior::kForward: return "forward";
  }
  return "forward";
}

namespace {

// Signed distance to the lane polyline, positive on the left of its direction.
double signed_lane_offset(const Lane& lane, const Vec2& p) {
  double best = std::numeric_limits<double>::infinity();
  double sign = 1.0;
  for (size_t i = 0; i + 1 < lane.points.size(); ++i) {
    const Vec2& a = lane.points[i];
    const Vec2& b = lane.points[i + 1];
    const double d = point_segment_distance(p, a, b);
    if (d < best) {
      best = d;
      const Vec2 ab = b - a;
      const Vec2 ap = p - a;
      sign = ab.x() * ap.y() - ab.y() * ap.x() >= 0.0 ? 1.0 : -1.0;
    }
  }
  if (lane.points.size() == 1) best = (p - lane.points[0]).norm();
  return sign * best;
}

}  // namespace

Behavior classify_agent(const ScenarioRecord& record, int agent,
                        const BehaviorThresholds& th) {
  const auto& states = record.agents.at(agent).states;
  std::vector<AgentState> track;
  for (const auto& s : states) {
    if (s) track.push_back(*s);
  }
  if (track.size() < 2) return Behavior::kForward;

  double speed = 0.0;
  for (const AgentState& s : track) speed += std::hypot(s.vx, s.vy);
  speed /= static_cast<double>(track.size());
  if (speed < th.stop_speed) return Behavior::kStop;

  double turn = 0.0;
  for (size_t i = 1; i < track.size(); ++i) turn += wrap_angle(track[i].heading - track[i - 1].heading);
  const double turn_deg = turn * 180.0 / std::numbers::pi;
  if (std::abs(turn_deg) > th.turn_max_deg) return Behavior::kUTurn;
  if (std::abs(turn_deg) >= th.turn_min_deg) {
    return turn_deg > 0 ? Behavior::kLeftTurn : Behavior::kRightTurn;
  }

  const MapSet map = to_map(record);
  if (!map.empty()) {
    const Vec2 first(track.front().x, track.front().y);
    const Vec2 last(track.back().x, track.back().y);
    const int lane = nearest_lane(map, first);
    const double shift = signed_lane_offset(map.lanes[lane], last) -
                         signed_lane_offset(map.lanes[lane], first);
    if (std::abs(shift) > th.lane_change_fraction * th.lane_width &&
        std::abs(turn_deg) < th.lane_change_max_heading_deg) {
      return shift > 0 ? Behavior::kLeftLaneChange : Behavior::kRightLaneChange;
    }
    for (const Lane& l : map.lanes) {
      if (l.type != LaneType::kIntersection) continue;
      for (const AgentState& s : track) {
        if (lane_distance(l, Vec2(s.x, s.y)) <= th.intersection_distance) {
          return Behavior::kIntersectionPassing;
        }
      }
    }
  }
  return Behavior::kForward;
}

std::string BehaviorStats::to_json() const {
  nlohmann::json j;
  for (int i = 0; i < kBehaviorCount; ++i) j[to_string(static_cast<Behavior>(i))] = percent[i];
  j["agents"] = agents;
  return j.dump();
}

BehaviorStats behavior_stats(std::span<const ScenarioRecord> corpus, const BehaviorThresholds& th) {
  BehaviorStats out;
  std::array<int, kBehaviorCount> counts{};
  for (const ScenarioRecord& r : corpus) {
    for (int a = 0; a < static_cast<int>(r.agents.size()); ++a) {
      ++counts[static_cast<int>(classify_agent(r, a, th))];
      ++out.agents;
    }
  }
  if (out.agents > 0) {
    for (int i = 0; i < kBehaviorCount; ++i) out.percent[i] = 100.0 * counts[i] / out.agents;
  }
  return out;
}

}  // namespace scenegen
