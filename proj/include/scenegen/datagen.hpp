#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "scenegen/record.hpp"

namespace scenegen {

enum class TemplateKind { kStraight, kArc, kCrossing };

std::string to_string(TemplateKind kind);
TemplateKind template_kind_from_string(const std::string& name);

struct MapTemplate {
  TemplateKind kind = TemplateKind::kStraight;
  int lane_count = 3;
  double lane_width = 3.5;
  double arc_radius = 50.0;  // arc only; sign of the turn is drawn per scenario
};

struct TemplateMix {
  double straight = 1.0;
  double arc = 1.0;
  double crossing = 1.0;
};

// Category proportions of an emitted corpus (free exploration : goal-conditioned : attack).
struct KindMix {
  int free = 4;
  int conditioned = 4;
  int attack = 2;
};

// Car-following parameters; `min_gap` is a bumper-to-bumper floor the integrator enforces
// between a follower and its same-lane leader.
struct FollowModel {
  double max_accel = 1.5;
  double comfort_decel = 2.0;
  double time_headway = 1.2;
  double min_gap = 2.0;
};

struct DatagenConfig {
  RecordMeta meta;
  TemplateMix templates;
  KindMix kinds;
  int min_agents = 2;
  int max_agents = 8;
  int min_lanes = 2;
  int max_lanes = 4;
  double lane_width = 3.5;
  double min_radius = 30.0;
  double max_radius = 80.0;
  double lane_change_probability = 0.15;
  double stop_probability = 0.1;
  double point_spacing = 2.0;
  double min_speed = 6.0;
  double max_speed = 15.0;
  FollowModel follow;
};

// Desired acceleration of a follower (speed v, desired speed v0) behind a leader at
// bumper gap `gap` travelling at `leader_speed`. Pass infinity as gap for a free road.
double follow_acceleration(const FollowModel& model, double v, double v0, double gap,
                           double leader_speed);

std::string kind_for_index(const KindMix& mix, std::size_t index);

// Scenario `index` of the corpus seeded by `seed`; depends only on (config, seed, index).
// The template is forced when `forced` is given.
ScenarioRecord generate_scenario(const DatagenConfig& config, std::uint64_t seed,
                                 std::size_t index, const MapTemplate* forced = nullptr);

std::vector<ScenarioRecord> generate_corpus(std::size_t n, const DatagenConfig& config,
                                            std::uint64_t seed);

}  // namespace scenegen
