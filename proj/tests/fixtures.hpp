#pragma once

// Planted attack scenarios with known checklist outcomes, shared by the unit tests and the
// acceptance binary. Ego drives +x along y = 0 through the origin at frame 5; a second
// lane runs along x = 0 in +y. History 4 frames, current frame 4, 16 future frames.

#include <cmath>
#include <numbers>
#include <set>
#include <string>
#include <vector>

#include "scenegen/attack.hpp"
#include "support.hpp"

namespace testing {

enum class AttackFixture { kTBone, kMissed, kInPlaceUTurn, kLateralShift };

struct PlantedAttack {
  scenegen::ScenarioRecord record;
  std::set<scenegen::ChecklistFailure> expected;
};

inline PlantedAttack planted_attack(AttackFixture kind) {
  using scenegen::ChecklistFailure;
  ScenarioRecord r;
  r.meta.id = "planted";
  r.meta.ego_id = "ego";
  const int T = r.meta.total_frames();
  const double dt = r.meta.dt_s;
  LaneRecord along_x, along_y;
  for (double s = -60; s <= 60; s += 2.0) {
    along_x.points.emplace_back(s, 0.0);
    along_y.points.emplace_back(0.0, s);
  }
  r.lanes = {along_x, along_y};

  AgentTrack ego{"ego", "vehicle", 4.5, 1.9, {}};
  AgentTrack atk{"attacker", "vehicle", 4.5, 1.9, {}};
  const double v = 8.0;
  const double half_pi = std::numbers::pi / 2;
  for (int t = 0; t < T; ++t) {
    ego.states.push_back(moving(-20.0 + v * dt * t, 0.0, 0.0, v));
    switch (kind) {
      case AttackFixture::kTBone:
        atk.states.push_back(moving(0.0, -20.0 + v * dt * t, half_pi, v));
        break;
      case AttackFixture::kMissed:
        atk.states.push_back(moving(0.0, -60.0 + v * dt * t, half_pi, v));
        break;
      case AttackFixture::kInPlaceUTurn: {
        // Parked on the ego's path, then spinning through 180 degrees over the future.
        const double h = half_pi + std::numbers::pi * std::max(0, t - 4) / (T - 5);
        atk.states.push_back(scenegen::AgentState{0.1 * std::cos(h), 0.1 * std::sin(h), h, 0.0, 0.0});
        break;
      }
      case AttackFixture::kLateralShift:
        // Slides along +y while pointing along +x.
        atk.states.push_back(scenegen::AgentState{0.0, -20.0 + v * dt * t, 0.0, 0.0, v});
        break;
    }
  }
  r.agents = {ego, atk};

  PlantedAttack out{r, {}};
  switch (kind) {
    case AttackFixture::kTBone: break;
    case AttackFixture::kMissed: out.expected = {ChecklistFailure::kNoCollision}; break;
    case AttackFixture::kInPlaceUTurn: out.expected = {ChecklistFailure::kInPlaceUTurn}; break;
    case AttackFixture::kLateralShift: out.expected = {ChecklistFailure::kLateralShift}; break;
  }
  return out;
}

inline std::vector<AttackFixture> all_attack_fixtures() {
  return {AttackFixture::kTBone, AttackFixture::kMissed, AttackFixture::kInPlaceUTurn,
          AttackFixture::kLateralShift};
}

}  // namespace testing
