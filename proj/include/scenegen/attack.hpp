#pragma once

#include <cstdint>
#include <numbers>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "scenegen/denoiser.hpp"
#include "scenegen/record.hpp"
#include "scenegen/scheduler.hpp"

namespace scenegen {

struct AttackSpec {
  double pool_radius = 30.0;                     // m around the ego at the current frame
  double half_angle = std::numbers::pi / 6.0;    // sector half-angle, rad
  // Sector radius is the attacker's historical speed times this horizon; <= 0 uses the
  // record's future span.
  double horizon_s = 0.0;
  // A waypoint is only a candidate when the attacker can cover the distance by then at
  // its speed plus this margin (m/s). Infinity disables the check.
  double reach_margin = 3.0;
  int grid_size = 32;
  GuidanceConfig guidance{};
};

enum class ChecklistFailure { kNoCollision, kOffRoad, kInPlaceUTurn, kLateralShift };

std::string to_string(ChecklistFailure f);

struct ChecklistResult {
  bool passed = false;
  std::set<ChecklistFailure> failures;

  std::string to_json() const;
};

struct ChecklistThresholds {
  double u_turn_deg = 150.0;
  double u_turn_displacement = 3.0;   // m
  double lateral_speed = 4.0;         // m/s
  int lateral_frames = 2;             // consecutive frames
  double off_road_distance = 2.0;     // m from the nearest lane
};

// Uniform draw among non-ego agents within the pool radius of the ego at the current
// frame, skipping `excluded`. None when the pool is empty or the ego has fewer than two
// valid history frames.
std::optional<std::string> select_attacker(const ScenarioRecord& record, const std::string& ego_id,
                                           const AttackSpec& spec, std::mt19937_64& rng,
                                           const std::set<std::string>& excluded = {});

struct AttackGoal {
  int frame = 0;
  Vec2 position = Vec2::Zero();
};

// Earliest ego future waypoint inside the attacker's sector: apex at its current position,
// axis along its historical heading, radius speed * horizon, half-angle from the spec.
std::optional<AttackGoal> pick_attack_goal(const ScenarioRecord& record,
                                           const std::string& attacker_id,
                                           const std::string& ego_id, const AttackSpec& spec);

ChecklistResult checklist(const ScenarioRecord& record, const std::string& attacker_id,
                          const std::string& ego_id, const ChecklistThresholds& thresholds = {});

struct AttackOutcome {
  std::optional<ScenarioRecord> record;  // set only when the checklist passed
  ChecklistResult last;
  std::string attacker_id;
  int attempts = 0;
};

// Holds the ego to its logged future, pins the attacker's goal token at the picked
// waypoint and samples the rest with the trapezoidal schedule and guidance (the
// attacker-ego pair exempt from collision avoidance). Retries over the pool until a
// candidate passes the checklist or the pool is exhausted.
AttackOutcome synthesize_attack(const ScenarioRecord& record, const Denoiser& denoiser,
                                const ChannelStats& stats, const AttackSpec& spec,
                                std::uint64_t seed, const ChecklistThresholds& thresholds = {});

}  // namespace scenegen
