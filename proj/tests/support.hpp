#pragma once

// Fixtures and hand-rolled generators shared by the test binaries.

#include <cmath>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include "scenegen/record.hpp"
#include "scenegen/scene.hpp"

namespace testing {

using scenegen::AgentState;
using scenegen::AgentTrack;
using scenegen::LaneRecord;
using scenegen::ScenarioRecord;
using scenegen::SceneTensor;
using scenegen::Vec2;

using Rng = std::mt19937_64;

inline double uniform(Rng& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}
inline int uniform_int(Rng& rng, int lo, int hi) {
  return std::uniform_int_distribution<int>(lo, hi)(rng);
}
inline bool coin(Rng& rng, double p) { return uniform(rng, 0.0, 1.0) < p; }

// Metric scene with plausible tokens: unit heading, positive dimensions.
inline SceneTensor random_scene(Rng& rng, int agents, int frames, double valid_probability = 0.8) {
  SceneTensor s(agents, frames);
  for (int a = 0; a < agents; ++a) {
    for (int t = 0; t < frames; ++t) {
      if (!coin(rng, valid_probability)) continue;
      s.set_valid(a, t, true);
      const double h = uniform(rng, -std::numbers::pi, std::numbers::pi);
      auto tok = s.token(a, t);
      tok[scenegen::kX] = uniform(rng, -50, 50);
      tok[scenegen::kY] = uniform(rng, -50, 50);
      tok[scenegen::kSinHeading] = std::sin(h);
      tok[scenegen::kCosHeading] = std::cos(h);
      tok[scenegen::kVx] = uniform(rng, -15, 15);
      tok[scenegen::kVy] = uniform(rng, -15, 15);
      tok[scenegen::kLength] = uniform(rng, 3.5, 5.5);
      tok[scenegen::kWidth] = uniform(rng, 1.6, 2.2);
    }
  }
  return s;
}

// Normalized-space scene: every valid channel standard normal.
inline SceneTensor random_normalized(Rng& rng, int agents, int frames, double valid_probability = 0.8) {
  std::normal_distribution<double> normal(0.0, 1.0);
  SceneTensor s(agents, frames);
  for (int a = 0; a < agents; ++a) {
    for (int t = 0; t < frames; ++t) {
      if (!coin(rng, valid_probability)) continue;
      s.set_valid(a, t, true);
      for (double& v : s.token(a, t)) v = normal(rng);
    }
  }
  return s;
}

inline AgentState moving(double x, double y, double heading, double speed) {
  return AgentState{x, y, heading, speed * std::cos(heading), speed * std::sin(heading)};
}

// Straight multi-lane road along +x with lanes at y = 0, 3.5, 7, ... and agents driving
// at constant speed on them. Agent i sits on lane i % lanes.
inline ScenarioRecord straight_record(int agents, int lanes = 2, double speed = 8.0,
                                      int history = 4, int future = 16) {
  ScenarioRecord r;
  r.meta.history_frames = history;
  r.meta.future_frames = future;
  r.meta.id = "straight";
  r.meta.ego_id = "0";
  const int T = r.meta.total_frames();
  for (int l = 0; l < lanes; ++l) {
    LaneRecord lane;
    for (double x = -60; x <= 200; x += 2.0) lane.points.emplace_back(x, 3.5 * l);
    r.lanes.push_back(lane);
  }
  for (int a = 0; a < agents; ++a) {
    AgentTrack track;
    track.id = std::to_string(a);
    track.length_m = 4.5;
    track.width_m = 1.9;
    const double y = 3.5 * (a % lanes);
    const double x0 = -30.0 + 12.0 * (a / lanes) - 2.0 * a;
    for (int t = 0; t < T; ++t) {
      track.states.push_back(moving(x0 + speed * r.meta.dt_s * t, y, 0.0, speed));
    }
    r.agents.push_back(track);
  }
  return r;
}

// Random but schema-valid record, with gaps, several lanes and optional meta fields.
inline ScenarioRecord random_record(Rng& rng) {
  ScenarioRecord r;
  r.meta.dt_s = uniform(rng, 0.1, 1.0);
  r.meta.history_frames = uniform_int(rng, 0, 5);
  r.meta.current_frames = uniform_int(rng, 1, 2);
  r.meta.future_frames = uniform_int(rng, 1, 8);
  r.meta.range_m = uniform(rng, 50, 150);
  if (coin(rng, 0.5)) r.meta.id = "rec-" + std::to_string(uniform_int(rng, 0, 999));
  if (coin(rng, 0.5)) r.meta.kind = "free";
  const int A = uniform_int(rng, 0, 5);
  const int T = r.meta.total_frames();
  for (int a = 0; a < A; ++a) {
    AgentTrack track;
    track.id = "agent" + std::to_string(a);
    track.type = coin(rng, 0.8) ? "vehicle" : "truck";
    track.length_m = uniform(rng, 3, 12);
    track.width_m = uniform(rng, 1.5, 2.6);
    for (int t = 0; t < T; ++t) {
      if (coin(rng, 0.2)) {
        track.states.emplace_back();
      } else {
        track.states.push_back(AgentState{uniform(rng, -60, 60), uniform(rng, -60, 60),
                                          uniform(rng, -3.1, 3.1), uniform(rng, -20, 20),
                                          uniform(rng, -20, 20)});
      }
    }
    r.agents.push_back(track);
  }
  if (A > 0 && coin(rng, 0.5)) r.meta.goals.push_back({uniform_int(rng, 0, A - 1), T - 1});
  const int L = uniform_int(rng, 0, 3);
  for (int l = 0; l < L; ++l) {
    LaneRecord lane;
    lane.type = static_cast<scenegen::LaneType>(uniform_int(rng, 0, scenegen::kLaneTypeCount - 1));
    const int n = uniform_int(rng, 2, 10);
    Vec2 p(uniform(rng, -50, 50), uniform(rng, -50, 50));
    for (int i = 0; i < n; ++i) {
      lane.points.push_back(p);
      p += Vec2(uniform(rng, 0.5, 3), uniform(rng, -1, 1));
    }
    r.lanes.push_back(lane);
  }
  return r;
}

inline double max_abs_diff(const SceneTensor& a, const SceneTensor& b) {
  double m = 0.0;
  for (int i = 0; i < a.agents(); ++i) {
    for (int t = 0; t < a.frames(); ++t) {
      if (!a.valid(i, t)) continue;
      for (int c = 0; c < scenegen::kStateDim; ++c) m = std::max(m, std::abs(a.at(i, t, c) - b.at(i, t, c)));
    }
  }
  return m;
}

}  // namespace testing
