#include "scenegen/scheduler.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

namespace scenegen {

std::string to_string(Strategy s) {
  switch (s) {
    case Strategy::kFullSequence:
      return "full";
    case Strategy::kAutoregressive:
      return "ar";
    case Strategy::kPyramidal:
      return "pyramidal";
    case Strategy::kTrapezoidal:
      return "trapezoidal";
  }
  return "full";
}

Strategy strategy_from_string(const std::string& name) {
  if (name == "full" || name == "full-sequence") return Strategy::kFullSequence;
  if (name == "ar" || name == "autoregressive") return Strategy::kAutoregressive;
  if (name == "pyramidal") return Strategy::kPyramidal;
  if (name == "trapezoidal") return Strategy::kTrapezoidal;
  throw std::invalid_argument("unknown schedule strategy '" + name + "'");
}

ScheduleMatrix::ScheduleMatrix(Strategy strategy, int agents, int history_frames,
                               int generated_frames, int grid_size)
    : strategy_(strategy), agents_(agents), history_(history_frames),
      generated_(generated_frames), grid_(grid_size) {}

bool ScheduleMatrix::is_goal(int agent, int frame) const {
  return std::find(goals_.begin(), goals_.end(), TokenRef{agent, frame}) != goals_.end();
}

int ScheduleMatrix::pop_step(int agent, int frame) const {
  for (int m = 0; m <= steps(); ++m) {
    if (slices_[m](agent, frame) == 0.0) return m;
  }
  return -1;
}

void ScheduleMatrix::validate() const {
  if (slices_.size() < 2) throw std::logic_error("schedule has no steps");
  const int T = total_frames();
  for (int a = 0; a < agents_; ++a) {
    for (int t = 0; t < T; ++t) {
      const bool conditioned = t < history_ || is_goal(a, t);
      if (conditioned) {
        for (const auto& s : slices_) {
          if (s(a, t) != 0.0) throw std::logic_error("conditioned token has nonzero level");
        }
        continue;
      }
      if (slices_[0](a, t) != 1.0) throw std::logic_error("generated token does not start at 1");
      int pops = 0;
      for (size_t m = 1; m < slices_.size(); ++m) {
        if (slices_[m](a, t) > slices_[m - 1](a, t)) throw std::logic_error("level increases");
        if (slices_[m](a, t) == 0.0 && slices_[m - 1](a, t) > 0.0) ++pops;
      }
      if (pops != 1 || slices_.back()(a, t) != 0.0) {
        throw std::logic_error("generated token does not pop exactly once");
      }
    }
  }
}

namespace {

void check_dims(int agents, int history, int generated, int grid) {
  if (agents < 0 || history < 0) throw std::invalid_argument("schedule: negative dimensions");
  if (generated < 1) throw std::invalid_argument("schedule: need at least one generated frame");
  if (grid < 1) throw std::invalid_argument("schedule: grid size must be positive");
}

// Generated frame tau (1-based) at step m, on the exact 1/M lattice.
double frame_level(Strategy s, int tau, int m, int F, int M) {
  auto clamp_level = [M](long numerator) {
    numerator = std::clamp<long>(numerator, 0, M);
    return static_cast<double>(numerator) / M;
  };
  switch (s) {
    case Strategy::kFullSequence:
      return clamp_level(M - m);
    case Strategy::kAutoregressive: {
      const long start = static_cast<long>(tau - 1) * M;
      return clamp_level(M - (m - start));
    }
    case Strategy::kPyramidal:
      return clamp_level(M - (m - tau));
    case Strategy::kTrapezoidal: {
      const int admit = std::min(tau, F + 1 - tau);
      return clamp_level(M - (m - admit));
    }
  }
  return 1.0;
}

int total_steps(Strategy s, int F, int M) {
  switch (s) {
    case Strategy::kFullSequence:
      return M;
    case Strategy::kAutoregressive:
      return F * M;
    case Strategy::kPyramidal:
      return F + M;
    case Strategy::kTrapezoidal:
      return (F + 1) / 2 + M;
  }
  return M;
}

void apply_goals(ScheduleMatrix& schedule, const ScheduleOptions& options) {
  const int T = schedule.total_frames();
  for (const TokenRef& g : options.goals) {
    if (g.agent < 0 || g.agent >= schedule.agents() || g.frame < 0 || g.frame >= T) {
      throw std::invalid_argument("schedule: goal token out of range");
    }
    schedule.mutable_goals().push_back(g);
    for (auto& slice : schedule.mutable_slices()) slice(g.agent, g.frame) = 0.0;
  }
}

}  // namespace

ScheduleMatrix build_schedule(Strategy strategy, int agents, int history_frames,
                              int generated_frames, int grid_size,
                              const ScheduleOptions& options) {
  check_dims(agents, history_frames, generated_frames, grid_size);
  if (strategy == Strategy::kTrapezoidal && options.goals.empty() && !options.designated_terminal) {
    throw std::invalid_argument("trapezoidal schedule needs goal tokens or a designated terminal frame");
  }
  ScheduleMatrix schedule(strategy, agents, history_frames, generated_frames, grid_size);
  const int T = history_frames + generated_frames;
  const int steps = total_steps(strategy, generated_frames, grid_size);
  auto& slices = schedule.mutable_slices();
  slices.reserve(steps + 1);
  for (int m = 0; m <= steps; ++m) {
    NoiseMatrix slice(agents, T, 0.0);
    for (int tau = 1; tau <= generated_frames; ++tau) {
      const double level =
          m == 0 ? 1.0 : frame_level(strategy, tau, m, generated_frames, grid_size);
      for (int a = 0; a < agents; ++a) slice(a, history_frames + tau - 1) = level;
    }
    slices.push_back(std::move(slice));
  }
  apply_goals(schedule, options);
  return schedule;
}

ScheduleMatrix build_schedule_from_grid(int agents, int history_frames, int generated_frames,
                                        std::span<const double> levels,
                                        const ScheduleOptions& options) {
  if (levels.size() < 2 || levels.front() != 1.0 || levels.back() != 0.0) {
    throw std::invalid_argument("level grid must run from 1 to 0");
  }
  for (size_t i = 1; i < levels.size(); ++i) {
    if (!(levels[i] < levels[i - 1])) throw std::invalid_argument("level grid must be strictly descending");
  }
  const int steps = static_cast<int>(levels.size()) - 1;
  check_dims(agents, history_frames, generated_frames, steps);
  ScheduleMatrix schedule(Strategy::kFullSequence, agents, history_frames, generated_frames, steps);
  const int T = history_frames + generated_frames;
  for (int m = 0; m <= steps; ++m) {
    NoiseMatrix slice(agents, T, 0.0);
    for (int a = 0; a < agents; ++a) {
      for (int t = history_frames; t < T; ++t) slice(a, t) = levels[m];
    }
    schedule.mutable_slices().push_back(std::move(slice));
  }
  apply_goals(schedule, options);
  return schedule;
}

int Trace::pop_step(TokenRef token) const {
  for (const auto& s : steps) {
    if (std::find(s.pops.begin(), s.pops.end(), token) != s.pops.end()) return s.m;
  }
  return 0;
}

std::string Trace::to_jsonl() const {
  using nlohmann::json;
  auto refs = [](const std::vector<TokenRef>& v) {
    json arr = json::array();
    for (const auto& r : v) arr.push_back({r.agent, r.frame});
    return arr;
  };
  std::ostringstream os;
  for (const auto& s : steps) {
    json line = {{"m", s.m},
                 {"in_flight", s.in_flight},
                 {"pops", refs(s.pops)},
                 {"overrides_applied", refs(s.overrides_applied)},
                 {"overrides_rejected", refs(s.overrides_rejected)}};
    os << line.dump() << '\n';
  }
  return os.str();
}

namespace {

// Applies guidance to the clean estimate of tokens that move this step. Geometry uses
// conditioned tokens (level 0) as fixed neighbours; tokens still at level 1 have no
// estimate yet and are left out.
X0Corrector make_corrector(const SceneTensor& noisy, const NoiseMatrix& k_now, const MapSet& map,
                           const RunOptions& options) {
  return [&noisy, &k_now, &map, &options](SceneTensor& x0, const TokenMask& moving) {
    const int A = x0.agents();
    const int T = x0.frames();
    SceneTensor view(A, T);
    TokenMask frozen(A, T, true);
    for (int a = 0; a < A; ++a) {
      for (int t = 0; t < T; ++t) {
        if (!noisy.valid(a, t)) continue;
        const double k = k_now(a, t);
        if (k == 0.0) {
          std::copy(noisy.token(a, t).begin(), noisy.token(a, t).end(), view.token(a, t).begin());
          view.set_valid(a, t, true);
        } else if (moving(a, t) && NoiseSchedule::alpha(k) > kSingularAlpha) {
          std::copy(x0.token(a, t).begin(), x0.token(a, t).end(), view.token(a, t).begin());
          view.set_valid(a, t, true);
          frozen.set(a, t, false);
        }
      }
    }
    const SceneTensor metric = denormalize(view, options.stats);
    SceneTensor corrected = metric;
    const double lambda = options.guidance.lambda_each();
    const PairExemptions* ex = options.exemptions.empty() ? nullptr : &options.exemptions;
    if (options.guidance.collision) corrected = apply_collision(corrected, lambda, &frozen, ex);
    if (options.guidance.comfort) corrected = apply_comfort(corrected, lambda, &frozen);
    if (options.guidance.on_road) {
      corrected = apply_on_road(corrected, map, lambda, options.guidance.d_th, &frozen);
    }
    for (int a = 0; a < A; ++a) {
      for (int t = 0; t < T; ++t) {
        if (frozen(a, t) || !view.valid(a, t)) continue;
        for (int c : {kX, kY}) {
          const double delta = corrected.at(a, t, c) - metric.at(a, t, c);
          if (delta != 0.0) x0.at(a, t, c) += delta / options.stats.std[c];
        }
      }
    }
  };
}

}  // namespace

RunResult run(const ScheduleMatrix& schedule, const Denoiser& denoiser,
              const SceneTensor& scene_init, const MapSet& map,
              std::span<const Override> overrides, const RunOptions& options) {
  const int A = schedule.agents();
  const int T = schedule.total_frames();
  if (scene_init.agents() != A || scene_init.frames() != T) {
    throw std::invalid_argument("run: initial scene shape does not match schedule");
  }
  const MapTokens map_tokens = denoiser.encode_map(map);
  const bool guided = options.guidance.active_count() > 0;

  RunResult result{scene_init, {}};
  SceneTensor& x = result.scene;
  SceneTensor x0_carry(A, T);
  x0_carry.valid_mask() = x.valid_mask();
  TokenMask forced(A, T);

  auto with_forced = [&forced, A, T](NoiseMatrix k) {
    for (int a = 0; a < A; ++a) {
      for (int t = 0; t < T; ++t) {
        if (forced(a, t)) k(a, t) = 0.0;
      }
    }
    return k;
  };

  for (int m = 1; m <= schedule.steps(); ++m) {
    StepRecord rec;
    rec.m = m;
    NoiseMatrix k_now = with_forced(schedule.slice(m - 1));
    for (const Override& ov : overrides) {
      if (ov.arrival_step != m) continue;
      const TokenRef tgt = ov.target;
      const bool in_range = tgt.agent >= 0 && tgt.agent < A && tgt.frame >= 0 && tgt.frame < T;
      if (schedule.strategy() == Strategy::kFullSequence || !in_range ||
          k_now(tgt.agent, tgt.frame) == 0.0) {
        rec.overrides_rejected.push_back(tgt);
        continue;
      }
      const TokenState normalized = normalize_token(ov.state, options.stats);
      std::copy(normalized.begin(), normalized.end(), x.token(tgt.agent, tgt.frame).begin());
      x.set_valid(tgt.agent, tgt.frame, true);
      x0_carry.set_valid(tgt.agent, tgt.frame, true);
      forced.set(tgt.agent, tgt.frame, true);
      k_now(tgt.agent, tgt.frame) = 0.0;
      rec.overrides_applied.push_back(tgt);
      rec.pops.push_back(tgt);
    }
    const NoiseMatrix k_next = with_forced(schedule.slice(m));

    const SceneTensor eps_hat = denoiser.predict(x, k_now, map_tokens);
    X0Corrector corrector;
    if (guided) corrector = make_corrector(x, k_now, map, options);
    SceneTensor next = reverse_step(x, k_now, k_next, eps_hat, x0_carry, corrector);

    for (int a = 0; a < A; ++a) {
      for (int t = 0; t < T; ++t) {
        if (!x.valid(a, t)) continue;
        if (k_now(a, t) > 0.0 && k_next(a, t) == 0.0) rec.pops.push_back({a, t});
        if (k_next(a, t) > 0.0 && k_next(a, t) < 1.0) ++rec.in_flight;
      }
    }
    x = std::move(next);
    result.trace.steps.push_back(std::move(rec));
  }
  return result;
}

int reaction_latency(const ScheduleMatrix& schedule, int override_step) {
  if (schedule.strategy() == Strategy::kFullSequence) return schedule.steps();
  const int steps = schedule.steps();
  override_step = std::clamp(override_step, 1, steps);
  int first_pop = steps + 1;
  for (int a = 0; a < schedule.agents(); ++a) {
    for (int t = schedule.history_frames(); t < schedule.total_frames(); ++t) {
      const int p = schedule.pop_step(a, t);
      if (p >= override_step && p < first_pop) first_pop = p;
    }
  }
  if (first_pop > steps) return steps - override_step + 1;
  return first_pop - override_step + 1;
}

int steady_reaction_latency(const ScheduleMatrix& schedule) {
  int first_pop = schedule.steps();
  for (int a = 0; a < schedule.agents(); ++a) {
    for (int t = schedule.history_frames(); t < schedule.total_frames(); ++t) {
      const int p = schedule.pop_step(a, t);
      if (p > 0) first_pop = std::min(first_pop, p);
    }
  }
  return reaction_latency(schedule, std::min(first_pop + 1, schedule.steps()));
}

}  // namespace scenegen
