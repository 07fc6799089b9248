#include "scenegen/closed_loop.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "scenegen/geometry.hpp"
#include "scenegen/sampling.hpp"

namespace scenegen {

void LoopConfig::validate(double dt) const {
  if (stride < 1) throw std::invalid_argument("loop: stride must be at least 1");
  if (duration_s < 0.0) throw std::invalid_argument("loop: negative duration");
  const double frames = duration_s / dt;
  if (std::abs(frames - std::round(frames)) > 1e-9) {
    throw std::invalid_argument("loop: duration must be a multiple of dt");
  }
  if (grid_size < 1) throw std::invalid_argument("loop: grid size must be positive");
}

namespace {

constexpr double kMaxAccel = 4.0;
constexpr double kMaxTurn = 0.5;

const AgentState& last_state(const ScenarioRecord& history, int ego) {
  const auto& states = history.agents.at(ego).states;
  for (auto it = states.rbegin(); it != states.rend(); ++it) {
    if (*it) return **it;
  }
  throw std::invalid_argument("planner: ego has no valid history frame");
}

AgentState move(const AgentState& prev, double heading, double speed, double dt) {
  AgentState s;
  s.heading = wrap_angle(heading);
  s.vx = speed * std::cos(heading);
  s.vy = speed * std::sin(heading);
  s.x = prev.x + s.vx * dt;
  s.y = prev.y + s.vy * dt;
  return s;
}

bool finite(const AgentState& s) {
  return std::isfinite(s.x) && std::isfinite(s.y) && std::isfinite(s.heading) &&
         std::isfinite(s.vx) && std::isfinite(s.vy);
}

AgentState coast(const AgentState& prev, double dt) {
  AgentState s = prev;
  s.x += prev.vx * dt;
  s.y += prev.vy * dt;
  return s;
}

}  // namespace

AgentState bound_action(const AgentState& prev, const AgentState& proposed, double dt) {
  const double prev_speed = std::hypot(prev.vx, prev.vy);
  const double speed = std::clamp(std::hypot(proposed.vx, proposed.vy),
                                  std::max(0.0, prev_speed - kMaxAccel * dt),
                                  prev_speed + kMaxAccel * dt);
  const double turn = std::clamp(wrap_angle(proposed.heading - prev.heading), -kMaxTurn, kMaxTurn);
  return move(prev, prev.heading + turn, speed, dt);
}

AgentState ConstantVelocityPlanner::next(const ScenarioRecord& history, int ego, int, double dt) {
  const AgentState& prev = last_state(history, ego);
  return bound_action(prev, coast(prev, dt), dt);
}

AgentState HardStopPlanner::next(const ScenarioRecord& history, int ego, int, double dt) {
  const AgentState& prev = last_state(history, ego);
  const double speed = std::max(0.0, std::hypot(prev.vx, prev.vy) - decel_ * dt);
  return bound_action(prev, move(prev, prev.heading, speed, dt), dt);
}

AgentState LaneFollowPlanner::next(const ScenarioRecord& history, int ego, int, double dt) {
  const AgentState& prev = last_state(history, ego);
  const double prev_speed = std::hypot(prev.vx, prev.vy);
  const double speed = std::clamp(target_speed_, prev_speed - 2.0 * dt, prev_speed + 2.0 * dt);
  const MapSet map = to_map(history);
  const Vec2 pos(prev.x, prev.y);
  const int lane = nearest_lane(map, pos);
  double heading = prev.heading;
  if (lane >= 0 && map.lanes[lane].points.size() >= 2) {
    const auto& pts = map.lanes[lane].points;
    size_t seg = 0;
    double best = std::numeric_limits<double>::infinity();
    for (size_t i = 0; i + 1 < pts.size(); ++i) {
      const double d = point_segment_distance(pos, pts[i], pts[i + 1]);
      if (d < best) {
        best = d;
        seg = i;
      }
    }
    // Walk the polyline from the projection until the lookahead distance is used up.
    const Vec2 ab = pts[seg + 1] - pts[seg];
    const double u = std::clamp((pos - pts[seg]).dot(ab) / ab.squaredNorm(), 0.0, 1.0);
    Vec2 at = pts[seg] + u * ab;
    double left = lookahead_;
    size_t i = seg + 1;
    Vec2 target = at;
    while (true) {
      const double len = (pts[i] - at).norm();
      if (len >= left || i + 1 == pts.size()) {
        target = len > 1e-9 ? Vec2(at + (pts[i] - at) * std::min(1.0, left / len)) : pts[i];
        break;
      }
      left -= len;
      at = pts[i];
      ++i;
    }
    const Vec2 dir = target - pos;
    if (dir.norm() > 1e-6) heading = std::atan2(dir.y(), dir.x());
  }
  return bound_action(prev, move(prev, heading, speed, dt), dt);
}

AgentState LogReplayPlanner::next(const ScenarioRecord& history, int ego, int frame, double) {
  const std::string& id = history.agents.at(ego).id;
  const int a = log_.agent_index(id);
  if (a < 0) throw std::invalid_argument("log replay: agent '" + id + "' not in log");
  const auto& states = log_.agents[a].states;
  if (frame < 0 || frame >= static_cast<int>(states.size()) || !states[frame]) {
    throw std::out_of_range("log replay: no logged ego state at frame " + std::to_string(frame));
  }
  return *states[frame];
}

std::shared_ptr<const Denoiser> OracleEngine::denoiser_for(const ScenarioRecord& window,
                                                           int start) const {
  const int T = window.meta.total_frames();
  if (start + T > log_.meta.total_frames()) {
    throw std::out_of_range("oracle engine: log too short for window at frame " + std::to_string(start));
  }
  SceneTensor truth(static_cast<int>(window.agents.size()), T);
  const SceneTensor full = to_tensor(log_);
  for (int a = 0; a < truth.agents(); ++a) {
    const int la = log_.agent_index(window.agents[a].id);
    if (la < 0) continue;
    for (int t = 0; t < T; ++t) {
      if (!full.valid(la, start + t)) continue;
      std::copy(full.token(la, start + t).begin(), full.token(la, start + t).end(),
                truth.token(a, t).begin());
      truth.set_valid(a, t, true);
    }
  }
  return std::make_shared<OracleDenoiser>(normalize(truth, stats_));
}

StepOutput step_world(const ScenarioRecord& window, int ego,
                      const std::vector<AgentState>& actions, const WorldEngine& engine,
                      const LoopConfig& config, int start) {
  const int H = window.meta.conditioned_frames();
  const int T = window.meta.total_frames();
  const int stride = static_cast<int>(actions.size());
  if (stride < 1 || stride > T - H) throw std::invalid_argument("step_world: bad action count");
  const double dt = window.meta.dt_s;

  StepOutput out;
  ScenarioRecord staged = window;
  auto& ego_states = staged.agents.at(ego).states;
  AgentState prev = last_state([&] {
    ScenarioRecord h = window;
    for (auto& a : h.agents) a.states.resize(H);
    return h;
  }(), ego);
  std::vector<AgentState> applied;
  for (int s = 0; s < stride; ++s) {
    AgentState act = actions[s];
    if (!finite(act)) {
      act = coast(prev, dt);
      out.action_rejected = true;
    }
    ego_states[H + s] = act;
    applied.push_back(act);
    prev = act;
  }

  const auto denoiser = engine.denoiser_for(staged, start);
  SampleRequest request;
  request.strategy = config.strategy;
  request.grid_size = config.grid_size;
  request.guidance = config.guidance;
  request.seed = config.seed + static_cast<std::uint64_t>(start);
  std::vector<TokenRef> goals;
  std::vector<Override> overrides;
  const double length = staged.agents[ego].length_m;
  const double width = staged.agents[ego].width_m;
  for (int s = 0; s < stride; ++s) {
    if (config.strategy == Strategy::kFullSequence) {
      goals.push_back({ego, H + s});
    } else {
      overrides.push_back({{ego, H + s}, to_token(applied[s], length, width), 1});
    }
  }
  const SampleResult sample =
      sample_scenario(staged, *denoiser, engine.stats(), request, goals, overrides);
  out.steps = sample.steps;
  if (config.strategy == Strategy::kFullSequence) {
    out.latency = sample.steps;
  } else {
    for (const Override& ov : overrides) {
      const int popped = sample.trace.pop_step(ov.target);
      out.latency = std::max(out.latency, popped > 0 ? popped - ov.arrival_step + 1 : sample.steps);
    }
  }

  for (int s = 0; s < stride; ++s) {
    std::vector<std::optional<AgentState>> frame;
    for (int a = 0; a < static_cast<int>(staged.agents.size()); ++a) {
      frame.push_back(a == ego ? std::optional<AgentState>(applied[s]) : sample.record.agents[a].states[H + s]);
    }
    out.emitted.push_back(std::move(frame));
  }

  out.window = window;
  for (int a = 0; a < static_cast<int>(out.window.agents.size()); ++a) {
    auto& st = out.window.agents[a].states;
    std::vector<std::optional<AgentState>> shifted(T);
    for (int t = 0; t < H; ++t) {
      const int src = t + stride;
      shifted[t] = src < H ? window.agents[a].states[src] : out.emitted[src - H][a];
    }
    st = std::move(shifted);
  }
  return out;
}

namespace {

using Track = std::vector<std::optional<AgentState>>;

// Window at rollout frame `start`: history from the rollout (or the log for non-ego
// agents when history updates are off) and future validity from the log when there is
// one, otherwise from presence at the last history frame.
ScenarioRecord make_window(const ScenarioRecord& initial, const std::vector<Track>& rollout,
                           int start, int ego, const WorldEngine& engine, const LoopConfig& config) {
  const int H = initial.meta.conditioned_frames();
  const int T = initial.meta.total_frames();
  const ScenarioRecord* log = engine.log();
  ScenarioRecord w;
  w.meta = initial.meta;
  w.meta.future_frames = T - H;
  w.lanes = initial.lanes;
  for (int a = 0; a < static_cast<int>(initial.agents.size()); ++a) {
    AgentTrack track = initial.agents[a];
    track.states.assign(T, std::nullopt);
    const int la = log ? log->agent_index(track.id) : -1;
    auto logged = [&](int frame) -> std::optional<AgentState> {
      if (la < 0 || frame >= static_cast<int>(log->agents[la].states.size())) return std::nullopt;
      return log->agents[la].states[frame];
    };
    for (int t = 0; t < H; ++t) {
      track.states[t] = (a != ego && !config.history_update && la >= 0) ? logged(start + t)
                                                                         : rollout[a][start + t];
    }
    for (int t = H; t < T; ++t) {
      if (la >= 0) {
        track.states[t] = logged(start + t);
      } else if (track.states[H - 1]) {
        track.states[t] = track.states[H - 1];
      }
    }
    w.agents.push_back(std::move(track));
  }
  return w;
}

}  // namespace

LoopResult run_loop(const ScenarioRecord& initial, Planner& planner, const WorldEngine& engine,
                    const LoopConfig& config) {
  const double dt = initial.meta.dt_s;
  config.validate(dt);
  LoopResult result;
  const int frames = static_cast<int>(std::lround(config.duration_s / dt));
  if (frames == 0) {
    result.rollout = initial;
    return result;
  }
  const int H = initial.meta.conditioned_frames();
  const std::string ego_id = initial.meta.ego_id.empty() ? initial.agents.at(0).id : initial.meta.ego_id;
  const int ego = initial.agent_index(ego_id);
  if (ego < 0) throw std::invalid_argument("loop: ego not in record");

  std::vector<Track> rollout;
  for (const AgentTrack& a : initial.agents) rollout.emplace_back(a.states.begin(), a.states.begin() + H);

  int steps_sum = 0;
  int emitted = 0;
  int start = 0;
  while (emitted < frames) {
    const int stride = std::min(config.stride, frames - emitted);
    ScenarioRecord window = make_window(initial, rollout, start, ego, engine, config);
    std::vector<AgentState> actions;
    ScenarioRecord history = window;
    for (int s = 0; s < stride; ++s) {
      for (auto& a : history.agents) a.states.resize(H + s);
      const AgentState act = planner.next(history, ego, start + H + s, dt);
      actions.push_back(act);
      history.agents[ego].states.push_back(act);
      for (int a = 0; a < static_cast<int>(history.agents.size()); ++a) {
        if (a != ego) history.agents[a].states.push_back(std::nullopt);
      }
    }
    const StepOutput step = step_world(window, ego, actions, engine, config, start);
    for (const auto& frame : step.emitted) {
      for (size_t a = 0; a < rollout.size(); ++a) rollout[a].push_back(frame[a]);
    }
    result.latencies.push_back(step.latency);
    steps_sum = step.steps;
    emitted += stride;
    start += stride;
  }

  result.rollout.meta = initial.meta;
  result.rollout.meta.future_frames = frames;
  result.rollout.lanes = initial.lanes;
  for (size_t a = 0; a < initial.agents.size(); ++a) {
    AgentTrack track = initial.agents[a];
    track.states = rollout[a];
    result.rollout.agents.push_back(std::move(track));
  }

  const SceneTensor scene = to_tensor(result.rollout);
  const MapSet map = to_map(result.rollout);
  result.report.r_road = offroad_rate(scene, map);
  result.report.r_col = collision_rate(scene);
  result.report.m_k = instability(scene, dt);
  result.report.steps = steps_sum;
  double latency = 0.0;
  for (int l : result.latencies) latency += l;
  result.report.react_steps =
      static_cast<int>(std::lround(latency / static_cast<double>(result.latencies.size())));
  if (const ScenarioRecord* log = engine.log()) {
    SceneTensor truth(scene.agents(), scene.frames());
    const SceneTensor full = to_tensor(*log);
    for (int a = 0; a < scene.agents(); ++a) {
      const int la = log->agent_index(result.rollout.agents[a].id);
      for (int t = 0; la >= 0 && t < std::min(scene.frames(), full.frames()); ++t) {
        if (!full.valid(la, t)) continue;
        std::copy(full.token(la, t).begin(), full.token(la, t).end(), truth.token(a, t).begin());
        truth.set_valid(a, t, true);
      }
    }
    TokenMask conditioned(scene.agents(), scene.frames());
    for (int a = 0; a < scene.agents(); ++a) {
      for (int t = 0; t < H; ++t) conditioned.set(a, t, true);
      if (a == ego) {
        for (int t = H; t < scene.frames(); ++t) conditioned.set(a, t, true);
      }
    }
    result.report.ade = ade(scene, truth, conditioned);
  }
  return result;
}

}  // namespace scenegen
