#include "scenegen/attack.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <json.hpp>

#include "scenegen/geometry.hpp"
#include "scenegen/sampling.hpp"

namespace scenegen {

std::string to_string(ChecklistFailure f) {
  switch (f) {
    case ChecklistFailure::kNoCollision: return "no_collision";
    case ChecklistFailure::kOffRoad: return "off_road";
    case ChecklistFailure::kInPlaceUTurn: return "in_place_u_turn";
    case ChecklistFailure::kLateralShift: return "lateral_shift";
  }
  return "no_collision";
}

std::string ChecklistResult::to_json() const {
  nlohmann::json j;
  j["passed"] = passed;
  j["failures"] = nlohmann::json::array();
  for (ChecklistFailure f : failures) j["failures"].push_back(to_string(f));
  return j.dump();
}

namespace {

int current_frame(const ScenarioRecord& r) { return r.meta.conditioned_frames() - 1; }

const AgentState* state_at(const ScenarioRecord& r, int agent, int frame) {
  const auto& s = r.agents[agent].states;
  if (frame < 0 || frame >= static_cast<int>(s.size()) || !s[frame]) return nullptr;
  return &*s[frame];
}

int require_agent(const ScenarioRecord& r, const std::string& id) {
  const int i = r.agent_index(id);
  if (i < 0) throw std::invalid_argument("agent '" + id + "' not in record");
  return i;
}

}  // namespace

std::optional<std::string> select_attacker(const ScenarioRecord& record, const std::string& ego_id,
                                           const AttackSpec& spec, std::mt19937_64& rng,
                                           const std::set<std::string>& excluded) {
  const int ego = record.agent_index(ego_id);
  if (ego < 0) return std::nullopt;
  const int now = current_frame(record);
  int history = 0;
  for (int t = 0; t <= now; ++t) history += state_at(record, ego, t) ? 1 : 0;
  const AgentState* e = state_at(record, ego, now);
  if (history < 2 || !e) return std::nullopt;

  std::vector<std::string> pool;
  for (int a = 0; a < static_cast<int>(record.agents.size()); ++a) {
    if (a == ego || excluded.contains(record.agents[a].id)) continue;
    const AgentState* s = state_at(record, a, now);
    if (s && std::hypot(s->x - e->x, s->y - e->y) <= spec.pool_radius) {
      pool.push_back(record.agents[a].id);
    }
  }
  if (pool.empty()) return std::nullopt;
  std::uniform_int_distribution<size_t> pick(0, pool.size() - 1);
  return pool[pick(rng)];
}

std::optional<AttackGoal> pick_attack_goal(const ScenarioRecord& record,
                                           const std::string& attacker_id,
                                           const std::string& ego_id, const AttackSpec& spec) {
  const int atk = require_agent(record, attacker_id);
  const int ego = require_agent(record, ego_id);
  const int now = current_frame(record);
  const double dt = record.meta.dt_s;
  const AgentState* cur = state_at(record, atk, now);
  if (!cur) return std::nullopt;
  int first = now;
  for (int t = 0; t < now; ++t) {
    if (state_at(record, atk, t)) {
      first = t;
      break;
    }
  }
  const Vec2 apex(cur->x, cur->y);
  double speed = std::hypot(cur->vx, cur->vy);
  double heading = cur->heading;
  if (first < now) {
    const AgentState* s0 = state_at(record, atk, first);
    const Vec2 disp = apex - Vec2(s0->x, s0->y);
    speed = disp.norm() / ((now - first) * dt);
    if (speed > 0.1) heading = std::atan2(disp.y(), disp.x());
  }
  if (speed <= 0.1) {
    const MapSet map = to_map(record);
    if (const auto lp = nearest_lane_point(map, apex)) {
      const Lane& lane = map.lanes[lp->lane];
      const size_t i = static_cast<size_t>(lp->point);
      const size_t j = i + 1 < lane.points.size() ? i + 1 : i;
      const size_t k = j == i && i > 0 ? i - 1 : i;
      const Vec2 tangent = lane.points[j] - lane.points[k];
      if (tangent.norm() > 1e-9) heading = std::atan2(tangent.y(), tangent.x());
    }
  }
  const double horizon =
      spec.horizon_s > 0.0 ? spec.horizon_s : record.meta.future_frames * record.meta.dt_s;
  const double radius = speed * horizon;
  if (radius <= 1e-6) return std::nullopt;
  const Vec2 axis(std::cos(heading), std::sin(heading));

  const int frames = static_cast<int>(record.agents[ego].states.size());
  for (int t = now + 1; t < frames; ++t) {
    const AgentState* w = state_at(record, ego, t);
    if (!w) continue;
    const Vec2 rel = Vec2(w->x, w->y) - apex;
    const double dist = rel.norm();
    if (dist > radius || dist < 1e-9) continue;
    const double angle = std::acos(std::clamp(rel.dot(axis) / dist, -1.0, 1.0));
    if (angle > spec.half_angle) continue;
    if (dist > (speed + spec.reach_margin) * (t - now) * dt) continue;
    return AttackGoal{t, Vec2(w->x, w->y)};
  }
  return std::nullopt;
}

ChecklistResult checklist(const ScenarioRecord& record, const std::string& attacker_id,
                          const std::string& ego_id, const ChecklistThresholds& th) {
  const int atk = require_agent(record, attacker_id);
  const int ego = require_agent(record, ego_id);
  const SceneTensor scene = to_tensor(record);
  const int T = scene.frames();
  const int now = current_frame(record);
  const double dt = record.meta.dt_s;
  ChecklistResult out;

  int contact = -1;
  for (int t = 0; t < T && contact < 0; ++t) {
    if (!scene.valid(atk, t) || !scene.valid(ego, t)) continue;
    if (boxes_overlap(OrientedBox::from_token(scene.token(atk, t)),
                      OrientedBox::from_token(scene.token(ego, t)))) {
      contact = t;
    }
  }
  if (contact < 0) out.failures.insert(ChecklistFailure::kNoCollision);

  const MapSet map = to_map(record);
  if (!map.empty()) {
    const int end = contact < 0 ? T : contact;
    for (int t = now; t < end; ++t) {
      if (!scene.valid(atk, t)) continue;
      double nearest = std::numeric_limits<double>::infinity();
      for (const Lane& lane : map.lanes) nearest = std::min(nearest, lane_distance(lane, scene.position(atk, t)));
      if (nearest > th.off_road_distance) {
        out.failures.insert(ChecklistFailure::kOffRoad);
        break;
      }
    }
  }

  std::vector<int> frames;
  for (int t = now; t < T; ++t) {
    if (scene.valid(atk, t)) frames.push_back(t);
  }
  if (frames.size() >= 2) {
    double turn = 0.0;
    for (size_t i = 1; i < frames.size(); ++i) {
      turn += wrap_angle(heading_of(scene, atk, frames[i]) - heading_of(scene, atk, frames[i - 1]));
    }
    const double net = (scene.position(atk, frames.back()) - scene.position(atk, frames.front())).norm();
    if (std::abs(turn) * 180.0 / std::numbers::pi > th.u_turn_deg && net < th.u_turn_displacement) {
      out.failures.insert(ChecklistFailure::kInPlaceUTurn);
    }
    int run = 0;
    for (size_t i = 1; i < frames.size(); ++i) {
      const int t = frames[i];
      if (frames[i - 1] != t - 1) {
        run = 0;
        continue;
      }
      const Vec2 v = (scene.position(atk, t) - scene.position(atk, t - 1)) / dt;
      const double h = heading_of(scene, atk, t);
      const double lateral = std::abs(v.dot(Vec2(-std::sin(h), std::cos(h))));
      run = lateral > th.lateral_speed ? run + 1 : 0;
      if (run >= th.lateral_frames) {
        out.failures.insert(ChecklistFailure::kLateralShift);
        break;
      }
    }
  }
  out.passed = out.failures.empty();
  return out;
}

AttackOutcome synthesize_attack(const ScenarioRecord& record, const Denoiser& denoiser,
                                const ChannelStats& stats, const AttackSpec& spec,
                                std::uint64_t seed, const ChecklistThresholds& th) {
  AttackOutcome out;
  out.last.failures.insert(ChecklistFailure::kNoCollision);
  const std::string ego_id = record.meta.ego_id.empty() ? record.agents.at(0).id : record.meta.ego_id;
  const int ego = record.agent_index(ego_id);
  if (ego < 0) return out;
  const int now = current_frame(record);
  const double dt = record.meta.dt_s;
  std::mt19937_64 rng(seed);
  std::set<std::string> tried;

  while (const auto attacker = select_attacker(record, ego_id, spec, rng, tried)) {
    tried.insert(*attacker);
    ++out.attempts;
    out.attacker_id = *attacker;
    const auto goal = pick_attack_goal(record, *attacker, ego_id, spec);
    if (!goal) {
      out.last = ChecklistResult{false, {ChecklistFailure::kNoCollision}};
      continue;
    }
    const int atk = record.agent_index(*attacker);
    ScenarioRecord staged = record;
    auto& states = staged.agents[atk].states;
    const AgentState start = *states[now];
    const Vec2 from(start.x, start.y);
    const Vec2 delta = goal->position - from;
    const double elapsed = (goal->frame - now) * dt;
    const double heading = std::atan2(delta.y(), delta.x());
    const double speed = delta.norm() / elapsed;
    for (int t = now + 1; t <= goal->frame; ++t) {
      const double f = static_cast<double>(t - now) / (goal->frame - now);
      const Vec2 p = from + f * delta;
      states[t] = AgentState{p.x(), p.y(), heading, speed * std::cos(heading), speed * std::sin(heading)};
    }

    std::vector<TokenRef> goals{{atk, goal->frame}};
    for (int t = now + 1; t < static_cast<int>(staged.agents[ego].states.size()); ++t) {
      if (staged.agents[ego].states[t]) goals.push_back({ego, t});
    }
    SampleRequest request;
    request.strategy = Strategy::kTrapezoidal;
    request.grid_size = spec.grid_size;
    request.guidance = spec.guidance;
    request.seed = seed + static_cast<std::uint64_t>(out.attempts);
    PairExemptions exempt;
    exempt.add(atk, ego);
    SampleResult sample = sample_scenario(staged, denoiser, stats, request, goals, {}, exempt);
    sample.record.meta.kind = "attack";
    sample.record.meta.ego_id = ego_id;
    sample.record.meta.attacker_id = *attacker;
    out.last = checklist(sample.record, *attacker, ego_id, th);
    if (out.last.passed) {
      out.record = std::move(sample.record);
      return out;
    }
  }
  return out;
}

}  // namespace scenegen
