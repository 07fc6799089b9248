#include "scenegen/datagen.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <numbers>
#include <optional>
#include <random>
#include <stdexcept>
#include <tuple>

#include <Eigen/Geometry>

#include "scenegen/geometry.hpp"

namespace scenegen {

std::string to_string(TemplateKind kind) {
  switch (kind) {
    case TemplateKind::kStraight: return "straight";
    case TemplateKind::kArc: return "arc";
    case TemplateKind::kCrossing: return "crossing";
  }
  return "straight";
}

TemplateKind template_kind_from_string(const std::string& name) {
  if (name == "straight") return TemplateKind::kStraight;
  if (name == "arc") return TemplateKind::kArc;
  if (name == "crossing") return TemplateKind::kCrossing;
  throw std::invalid_argument("unknown map template '" + name + "'");
}

double follow_acceleration(const FollowModel& m, double v, double v0, double gap,
                           double leader_speed) {
  const double free_term = 1.0 - std::pow(v / std::max(v0, 0.1), 4);
  if (!std::isfinite(gap)) return m.max_accel * free_term;
  if (gap <= 0.0) return -8.0;
  const double desired =
      m.min_gap + std::max(0.0, v * m.time_headway +
                                    v * (v - leader_speed) /
                                        (2.0 * std::sqrt(m.max_accel * m.comfort_decel)));
  const double ratio = desired / gap;
  return m.max_accel * (free_term - ratio * ratio);
}

std::string kind_for_index(const KindMix& mix, std::size_t index) {
  const int total = mix.free + mix.conditioned + mix.attack;
  if (mix.free < 0 || mix.conditioned < 0 || mix.attack < 0 || total <= 0) {
    throw std::invalid_argument("kind mix must be non-negative with a positive sum");
  }
  const int slot = static_cast<int>(index % static_cast<std::size_t>(total));
  if (slot < mix.free) return "free";
  if (slot < mix.free + mix.conditioned) return "conditioned";
  return "attack";
}

namespace {

constexpr double kSubstep = 0.1;
constexpr double kWarmup = 2.0;
constexpr double kLaneChangeDuration = 4.0;
constexpr double kCutInDuration = 2.5;

Vec2 unit(double heading) { return {std::cos(heading), std::sin(heading)}; }
Vec2 left_of(double heading) { return {-std::sin(heading), std::cos(heading)}; }

// Reference curve with lanes at lateral offsets (positive to the left of travel).
struct Road {
  bool arc = false;
  Vec2 origin = Vec2::Zero();
  double heading = 0.0;
  double radius = 0.0;
  int turn = 1;  // +1 left, -1 right
  std::vector<double> offsets;
  bool minor = false;

  double tangent(double u) const { return arc ? heading + turn * u / radius : heading; }

  Vec2 pos(double u, double d) const {
    if (!arc) return origin + u * unit(heading) + d * left_of(heading);
    const Vec2 center = origin + turn * radius * left_of(heading);
    const double phi = u / radius;
    const Vec2 radial =
        -turn * std::cos(phi) * left_of(heading) + std::sin(phi) * unit(heading);
    return center + (radius - turn * d) * radial;
  }

  // Lane arc length per unit of the reference parameter.
  double stretch(double d) const { return arc ? (radius - turn * d) / radius : 1.0; }
};

struct LaneChange {
  double start = 0.0;
  double duration = kLaneChangeDuration;
  double from = 0.0;
  double to = 0.0;
};

struct SimAgent {
  int road = 0;
  double u = 0.0;
  double d = 0.0;
  double v = 0.0;
  double v0 = 10.0;
  double length = 4.5;
  double width = 2.0;
  std::optional<LaneChange> change;
  std::optional<double> stop_u;
  bool ignores_others = false;  // scripted attacker
  bool ignored = false;         // ego ignores the attacker
  bool committed = false;       // minor-road agent past its stop line
};

struct Crossing {
  double major_u = 0.0;      // centre of the conflict box along the major road
  double major_half = 0.0;   // half extent of the box along the major road
  double minor_u = 0.0;      // centre along the minor road
  double minor_half = 0.0;
};

double lateral_offset(const SimAgent& a, double time) {
  if (!a.change) return a.d;
  const LaneChange& c = *a.change;
  const double p = std::clamp((time - c.start) / c.duration, 0.0, 1.0);
  return c.from + (c.to - c.from) * 0.5 * (1.0 - std::cos(std::numbers::pi * p));
}

double lateral_rate(const SimAgent& a, double time) {
  if (!a.change) return 0.0;
  const LaneChange& c = *a.change;
  const double p = (time - c.start) / c.duration;
  if (p <= 0.0 || p >= 1.0) return 0.0;
  return (c.to - c.from) * 0.5 * std::numbers::pi * std::sin(std::numbers::pi * p) / c.duration;
}

bool shares_lane(const SimAgent& self, const SimAgent& other, double lane_width) {
  const double tol = 0.6 * lane_width;
  if (std::abs(other.d - self.d) < tol) return true;
  if (self.change && std::abs(other.d - self.change->to) < tol) return true;
  return false;
}

struct World {
  std::vector<Road> roads;
  std::vector<SimAgent> agents;
  std::optional<Crossing> crossing;
  FollowModel follow;
  double lane_width = 3.5;

  // Nearest same-lane leader: (bumper gap, leader speed, index).
  std::optional<std::tuple<double, double, int>> leader(int i) const {
    const SimAgent& self = agents[i];
    std::optional<std::tuple<double, double, int>> best;
    for (int j = 0; j < static_cast<int>(agents.size()); ++j) {
      if (j == i) continue;
      const SimAgent& o = agents[j];
      if (o.road != self.road || o.u <= self.u) continue;
      if (self.ignores_others || (o.ignores_others && self.ignored)) continue;
      if (!shares_lane(self, o, lane_width)) continue;
      const double gap = (o.u - self.u) * roads[self.road].stretch(self.d) -
                         0.5 * (o.length + self.length);
      if (!best || gap < std::get<0>(*best)) best = std::make_tuple(gap, o.v, j);
    }
    return best;
  }

  bool major_traffic_near_box() const {
    for (const SimAgent& o : agents) {
      if (roads[o.road].minor) continue;
      const double rel = o.u - crossing->major_u;
      if (rel > -40.0 && rel < crossing->major_half + o.length) return true;
    }
    return false;
  }

  bool minor_traffic_in_box() const {
    for (const SimAgent& o : agents) {
      if (!roads[o.road].minor || !o.committed) continue;
      const double rel = o.u - crossing->minor_u;
      if (rel < crossing->minor_half + o.length) return true;
    }
    return false;
  }

  double acceleration(int i) const {
    const SimAgent& a = agents[i];
    double gap = std::numeric_limits<double>::infinity();
    double lead_v = 0.0;
    if (const auto l = leader(i)) {
      gap = std::get<0>(*l);
      lead_v = std::get<1>(*l);
    }
    auto virtual_stop = [&](double stop_u) {
      const double g = (stop_u - a.u) - 0.5 * a.length;
      if (g > -0.5 && g < gap) {
        gap = std::max(g, 0.01);
        lead_v = 0.0;
      }
    };
    if (a.stop_u) virtual_stop(*a.stop_u);
    if (crossing && !a.ignores_others) {
      const Road& road = roads[a.road];
      if (road.minor && !a.committed && major_traffic_near_box()) {
        virtual_stop(crossing->minor_u - crossing->minor_half - 1.0);
      }
      if (!road.minor && minor_traffic_in_box()) {
        const double entry = crossing->major_u - crossing->major_half - 1.0;
        if (a.u + 0.5 * a.length < entry) virtual_stop(entry);
      }
    }
    return std::clamp(follow_acceleration(follow, a.v, a.v0, gap, lead_v), -8.0, follow.max_accel);
  }

  void step(double time) {
    std::vector<double> acc(agents.size());
    for (size_t i = 0; i < agents.size(); ++i) acc[i] = acceleration(static_cast<int>(i));
    for (size_t i = 0; i < agents.size(); ++i) {
      SimAgent& a = agents[i];
      const double v_next = std::max(0.0, a.v + acc[i] * kSubstep);
      a.u += 0.5 * (a.v + v_next) * kSubstep / roads[a.road].stretch(a.d);
      a.v = v_next;
      a.d = lateral_offset(a, time + kSubstep);
      if (crossing && roads[a.road].minor && !a.committed) {
        const double stop_line = crossing->minor_u - crossing->minor_half - 1.0;
        if (a.u + 0.5 * a.length > stop_line + 0.5) a.committed = true;
        else if (!major_traffic_near_box() && a.u + 0.5 * a.length > stop_line - 1.5) a.committed = true;
      }
    }
    // Hard minimum gap, resolved front to back so every leader is final first.
    std::vector<int> order(agents.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
    std::sort(order.begin(), order.end(), [this](int x, int y) {
      if (agents[x].u != agents[y].u) return agents[x].u > agents[y].u;
      return x < y;
    });
    for (int i : order) {
      SimAgent& a = agents[i];
      if (a.ignores_others) continue;
      const auto l = leader(i);
      if (!l || std::get<0>(*l) >= follow.min_gap) continue;
      const SimAgent& o = agents[std::get<2>(*l)];
      if (!(std::abs(o.d - a.d) < 0.6 * lane_width)) continue;
      a.u = o.u - (0.5 * (o.length + a.length) + follow.min_gap) / roads[a.road].stretch(a.d);
      a.v = std::min(a.v, o.v);
    }
  }
};

struct Snapshot {
  double u;
  Vec2 pos;
  double heading;
  Vec2 vel;
};

Snapshot snapshot(const World& w, const SimAgent& a, double time) {
  const Road& r = w.roads[a.road];
  const double tangent = r.tangent(a.u);
  const double lat = lateral_rate(a, time);
  Snapshot s;
  s.u = a.u;
  s.pos = r.pos(a.u, a.d);
  s.vel = a.v * unit(tangent) + lat * left_of(tangent);
  s.heading = tangent + std::atan2(lat, std::max(a.v, 0.5));
  return s;
}

bool inside(const Vec2& p, double half) { return std::abs(p.x()) <= half && std::abs(p.y()) <= half; }

TemplateKind draw_template(const TemplateMix& mix, std::mt19937_64& rng) {
  const double total = mix.straight + mix.arc + mix.crossing;
  if (!(total > 0.0)) throw std::invalid_argument("template mix must have a positive sum");
  const double x = std::uniform_real_distribution<double>(0.0, total)(rng);
  if (x < mix.straight) return TemplateKind::kStraight;
  if (x < mix.straight + mix.arc) return TemplateKind::kArc;
  return TemplateKind::kCrossing;
}

std::vector<double> lane_offsets(int count, double width) {
  std::vector<double> out;
  for (int i = 0; i < count; ++i) out.push_back((i - 0.5 * (count - 1)) * width);
  return out;
}

}  // namespace

ScenarioRecord generate_scenario(const DatagenConfig& config, std::uint64_t seed,
                                 std::size_t index, const MapTemplate* forced) {
  if (config.min_agents < 1 || config.max_agents < config.min_agents || config.min_lanes < 1 ||
      config.max_lanes < config.min_lanes) {
    throw std::invalid_argument("datagen: invalid agent or lane bounds");
  }
  std::seed_seq seq{static_cast<std::uint64_t>(seed), static_cast<std::uint64_t>(index)};
  std::mt19937_64 rng(seq);
  auto uniform = [&rng](double lo, double hi) {
    return std::uniform_real_distribution<double>(lo, hi)(rng);
  };
  auto integer = [&rng](int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); };
  auto chance = [&uniform](double p) { return uniform(0.0, 1.0) < p; };

  MapTemplate tmpl;
  if (forced) {
    tmpl = *forced;
  } else {
    tmpl.kind = draw_template(config.templates, rng);
    tmpl.lane_count = integer(config.min_lanes, config.max_lanes);
    tmpl.lane_width = config.lane_width;
    tmpl.arc_radius = uniform(config.min_radius, config.max_radius);
  }
  if (tmpl.lane_count < 1 || !(tmpl.lane_width > 0.0) ||
      (tmpl.kind == TemplateKind::kArc && !(tmpl.arc_radius > 0.0))) {
    throw std::invalid_argument("datagen: template geometry must be positive");
  }
  const std::string kind = kind_for_index(config.kinds, index);
  const double w = tmpl.lane_width;

  World world;
  world.follow = config.follow;
  world.lane_width = w;
  Road major;
  major.offsets = lane_offsets(tmpl.lane_count, w);
  if (tmpl.kind == TemplateKind::kArc) {
    major.arc = true;
    major.radius = std::max(tmpl.arc_radius, 2.0 * tmpl.lane_count * w);
    major.turn = chance(0.5) ? 1 : -1;
  }
  world.roads.push_back(major);

  const int agent_count = integer(config.min_agents, config.max_agents);
  auto free_spot = [&world](int road, double u, double d, double clearance) {
    for (const SimAgent& o : world.agents) {
      if (o.road == road && std::abs(o.d - d) < 0.6 * world.lane_width &&
          std::abs(o.u - u) < clearance) {
        return false;
      }
    }
    return true;
  };
  auto new_agent = [&](int road, double u, double d) {
    SimAgent a;
    a.road = road;
    a.u = u;
    a.d = d;
    a.v0 = uniform(config.min_speed, config.max_speed);
    a.v = a.v0 * uniform(0.7, 1.0);
    a.length = uniform(4.2, 5.2);
    a.width = uniform(1.8, 2.1);
    return a;
  };

  // Ego first, on the major road.
  const int ego_lane = integer(0, tmpl.lane_count - 1);
  world.agents.push_back(new_agent(0, 0.0, major.offsets[ego_lane]));

  int minor_slots = 0;
  if (tmpl.kind == TemplateKind::kCrossing) {
    Crossing c;
    const double ego_travel = world.agents[0].v * (kWarmup + config.meta.dt_s *
                                                   (config.meta.conditioned_frames() - 1));
    c.major_u = ego_travel + uniform(8.0, 35.0);
    const int minor_lanes = integer(1, 2);
    Road minor;
    minor.minor = true;
    minor.offsets = lane_offsets(minor_lanes, w);
    const int dir = chance(0.5) ? 1 : -1;
    minor.heading = dir * 0.5 * std::numbers::pi;
    const double minor_reach = 80.0;
    // Minor reference crosses the major centreline at parameter minor_reach.
    minor.origin = major.pos(c.major_u, 0.0) - minor_reach * unit(minor.heading);
    c.minor_u = minor_reach;
    c.major_half = 0.5 * minor_lanes * w + 0.5;
    c.minor_half = 0.5 * tmpl.lane_count * w + 0.5;
    world.roads.push_back(minor);
    world.crossing = c;
    minor_slots = std::max(1, (agent_count - 1) / 2);
  }

  for (int i = 1; i < agent_count; ++i) {
    const bool on_minor = i <= minor_slots;
    const int road = on_minor ? 1 : 0;
    const Road& r = world.roads[road];
    for (int attempt = 0; attempt < 30; ++attempt) {
      const int lane = integer(0, static_cast<int>(r.offsets.size()) - 1);
      const double u = on_minor ? uniform(20.0, 75.0) : uniform(-40.0, 70.0);
      if (!free_spot(road, u, r.offsets[lane], 14.0)) continue;
      world.agents.push_back(new_agent(road, u, r.offsets[lane]));
      break;
    }
  }

  const int frames = config.meta.total_frames();
  const double horizon = kWarmup + config.meta.dt_s * (frames - 1);
  const double now = kWarmup + config.meta.dt_s * (config.meta.conditioned_frames() - 1);

  // Scripted events.
  int attacker = -1;
  for (int i = 0; i < static_cast<int>(world.agents.size()); ++i) {
    SimAgent& a = world.agents[i];
    const Road& r = world.roads[a.road];
    if (chance(config.stop_probability)) a.stop_u = a.u + a.v * uniform(3.0, 9.0);
    if (!r.minor && r.offsets.size() > 1 && chance(config.lane_change_probability)) {
      const int lane = static_cast<int>(std::lround(a.d / w + 0.5 * (r.offsets.size() - 1)));
      int target = lane + (chance(0.5) ? 1 : -1);
      if (target < 0 || target >= static_cast<int>(r.offsets.size())) target = 2 * lane - target;
      if (target >= 0 && target < static_cast<int>(r.offsets.size())) {
        a.change = LaneChange{uniform(0.0, horizon - kLaneChangeDuration), kLaneChangeDuration,
                              a.d, r.offsets[target]};
      }
    }
  }
  if (kind == "attack" && world.agents.size() >= 2 && tmpl.lane_count >= 2) {
    // Cut-in: an agent in a neighbouring lane slightly ahead of the ego merges into it.
    SimAgent& ego = world.agents[0];
    ego.change.reset();
    ego.stop_u.reset();
    const int lane = ego_lane == 0 ? 1 : ego_lane - 1;
    attacker = static_cast<int>(world.agents.size()) - 1;
    SimAgent& a = world.agents[attacker];
    a.road = 0;
    a.d = major.offsets[lane];
    a.v0 = ego.v0 * uniform(0.9, 1.2);
    a.v = ego.v;
    a.u = ego.u + uniform(4.0, 14.0);
    a.stop_u.reset();
    a.ignores_others = true;
    ego.ignored = true;
    a.change = LaneChange{now + uniform(0.0, 3.0), kCutInDuration, a.d, major.offsets[ego_lane]};
  }

  // Simulate, recording every dt.
  const int per_frame = static_cast<int>(std::lround(config.meta.dt_s / kSubstep));
  const int warm_steps = static_cast<int>(std::lround(kWarmup / kSubstep));
  std::vector<std::vector<Snapshot>> shots(world.agents.size());
  const int total_steps = warm_steps + per_frame * (frames - 1);
  for (int s = 0; s <= total_steps; ++s) {
    const double time = s * kSubstep;
    if (s >= warm_steps && (s - warm_steps) % per_frame == 0) {
      for (size_t i = 0; i < world.agents.size(); ++i) {
        shots[i].push_back(snapshot(world, world.agents[i], time));
      }
    }
    if (s < total_steps) world.step(time);
  }

  // Ego-centred frame at the current step.
  const int current = config.meta.conditioned_frames() - 1;
  const Vec2 origin = shots[0][current].pos;
  const double yaw = shots[0][current].heading;
  const Eigen::Rotation2Dd to_local(-yaw);
  auto local = [&](const Vec2& p) -> Vec2 { return to_local * (p - origin); };
  const double half = 0.5 * config.meta.range_m;

  ScenarioRecord rec;
  rec.meta = config.meta;
  rec.meta.kind = kind;
  rec.meta.id = std::to_string(seed) + "-" + std::to_string(index);
  rec.meta.ego_id = "0";
  for (size_t i = 0; i < world.agents.size(); ++i) {
    AgentTrack track;
    track.id = std::to_string(i);
    track.length_m = world.agents[i].length;
    track.width_m = world.agents[i].width;
    bool any = false;
    for (int f = 0; f < frames; ++f) {
      const Snapshot& s = shots[i][f];
      const Vec2 p = local(s.pos);
      if (!inside(p, half) && !(i == 0 && f == current)) {
        track.states.emplace_back();
        continue;
      }
      const Vec2 v = to_local * s.vel;
      track.states.push_back(AgentState{p.x(), p.y(), wrap_angle(s.heading - yaw), v.x(), v.y()});
      any = true;
    }
    if (!any) continue;
    if (static_cast<int>(i) == attacker) rec.meta.attacker_id = track.id;
    rec.agents.push_back(std::move(track));
  }

  // Goal-conditioned scenarios pin the final future state of a random non-empty subset.
  if (kind == "conditioned") {
    std::vector<std::array<int, 2>> candidates;
    for (size_t a = 0; a < rec.agents.size(); ++a) {
      const auto& states = rec.agents[a].states;
      for (int f = frames - 1; f > current; --f) {
        if (states[f]) {
          candidates.push_back({static_cast<int>(a), f});
          break;
        }
      }
    }
    for (const auto& c : candidates) {
      if (chance(0.5)) rec.meta.goals.push_back(c);
    }
    if (rec.meta.goals.empty() && !candidates.empty()) {
      rec.meta.goals.push_back(candidates[integer(0, static_cast<int>(candidates.size()) - 1)]);
    }
  }

  // Lanes: sample each lane around the ego, clip to the range, split at gaps and at
  // changes of lane type.
  for (size_t ri = 0; ri < world.roads.size(); ++ri) {
    const Road& r = world.roads[ri];
    double centre_u = 0.0;
    if (ri == 0) {
      centre_u = shots[0][current].u;
    } else {
      centre_u = world.crossing->minor_u;
    }
    double reach = 90.0;
    if (r.arc) reach = std::min(reach, 0.95 * std::numbers::pi * r.radius);
    for (double d : r.offsets) {
      const double spacing = config.point_spacing / r.stretch(d);
      std::vector<Vec2> run;
      LaneType run_type = LaneType::kDriving;
      auto flush = [&rec, &run, &run_type]() {
        if (run.size() >= 2) rec.lanes.push_back(LaneRecord{run_type, run});
        run.clear();
      };
      const int count = static_cast<int>(std::floor(2.0 * reach / spacing));
      for (int k = 0; k <= count; ++k) {
        const double u = centre_u - reach + k * spacing;
        const Vec2 p = local(r.pos(u, d));
        if (!inside(p, half)) {
          flush();
          continue;
        }
        LaneType type = LaneType::kDriving;
        if (world.crossing) {
          const Crossing& c = *world.crossing;
          const bool in_box = ri == 0 ? std::abs(u - c.major_u) <= c.major_half
                                      : std::abs(u - c.minor_u) <= c.minor_half;
          if (in_box) type = LaneType::kIntersection;
        }
        if (!run.empty() && type != run_type) {
          const Vec2 last = run.back();
          flush();
          run.push_back(last);
        }
        run_type = type;
        run.push_back(p);
      }
      flush();
    }
  }
  return rec;
}

std::vector<ScenarioRecord> generate_corpus(std::size_t n, const DatagenConfig& config,
                                            std::uint64_t seed) {
  if (n < 1) throw std::invalid_argument("generate_corpus: n must be at least 1");
  std::vector<ScenarioRecord> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) out.push_back(generate_scenario(config, seed, i));
  return out;
}

}  // namespace scenegen
