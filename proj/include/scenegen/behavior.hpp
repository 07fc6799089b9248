#pragma once

#include <array>
#include <span>
#include <string>

#include "scenegen/record.hpp"

namespace scenegen {

enum class Behavior {
  kIntersectionPassing,
  kLeftTurn,
  kRightTurn,
  kLeftLaneChange,
  kRightLaneChange,
  kUTurn,
  kStop,
  kForward,
};
inline constexpr int kBehaviorCount = 8;

std::string to_string(Behavior b);

struct BehaviorThresholds {
  double stop_speed = 0.5;          // m/s, mean over valid frames
  double turn_min_deg = 60.0;
  double turn_max_deg = 135.0;      // above this a U-turn
  double lane_width = 3.5;
  // Lateral displacement from the starting lane, as a fraction of the lane width, that
  // counts as a lane change.
  double lane_change_fraction = 0.75;
  double lane_change_max_heading_deg = 30.0;
  double intersection_distance = 2.0;  // m to an intersection-type lane
};

// Label of one agent; agents with fewer than two valid frames are kForward.
Behavior classify_agent(const ScenarioRecord& record, int agent,
                        const BehaviorThresholds& thresholds = {});

struct BehaviorStats {
  std::array<double, kBehaviorCount> percent{};
  int agents = 0;

  std::string to_json() const;
};

BehaviorStats behavior_stats(std::span<const ScenarioRecord> corpus,
                             const BehaviorThresholds& thresholds = {});

}  // namespace scenegen
