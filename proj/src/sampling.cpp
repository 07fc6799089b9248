#include "scenegen/sampling.hpp"

#include <algorithm>

namespace scenegen {

std::vector<TokenRef> draw_goals(const ScenarioRecord& record, double rate, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const int start = record.meta.conditioned_frames();
  std::vector<TokenRef> goals;
  for (int a = 0; a < static_cast<int>(record.agents.size()); ++a) {
    // Draw for every agent so the stream does not depend on which agents qualify.
    const bool keep = unit(rng) < rate;
    const auto& states = record.agents[a].states;
    int last = -1;
    for (int t = start; t < static_cast<int>(states.size()); ++t) {
      if (states[t]) last = t;
    }
    if (keep && last >= 0) goals.push_back({a, last});
  }
  return goals;
}

SampleResult sample_scenario(const ScenarioRecord& record, const Denoiser& denoiser,
                             const ChannelStats& stats, const SampleRequest& request,
                             std::span<const TokenRef> extra_goals,
                             std::span<const Override> overrides,
                             const PairExemptions& exemptions) {
  std::mt19937_64 rng(request.seed);
  const SceneTensor truth = to_tensor(record);
  const int A = truth.agents();
  const int T = truth.frames();
  const int history = record.meta.conditioned_frames();
  const int F = record.meta.future_frames;

  SampleResult out;
  out.goals = draw_goals(record, request.goal_rate, rng);
  for (const TokenRef& g : extra_goals) {
    if (g.agent < 0 || g.agent >= A || g.frame < history || g.frame >= T) {
      throw std::invalid_argument("sample: goal token outside the generated frames");
    }
    if (std::find(out.goals.begin(), out.goals.end(), g) == out.goals.end()) out.goals.push_back(g);
  }
  std::sort(out.goals.begin(), out.goals.end());

  ScheduleOptions options;
  options.goals = out.goals;
  options.designated_terminal = true;
  const ScheduleMatrix schedule =
      request.reduced_steps > 0
          ? build_schedule_from_grid(A, history, F,
                                     subsample_grid(request.grid_size, request.reduced_steps),
                                     options)
          : build_schedule(request.strategy, A, history, F, request.grid_size, options);

  out.conditioned = TokenMask(A, T);
  for (int a = 0; a < A; ++a) {
    for (int t = 0; t < history; ++t) out.conditioned.set(a, t, true);
  }
  for (const TokenRef& g : out.goals) out.conditioned.set(g.agent, g.frame, true);

  SceneTensor init = normalize(truth, stats);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (int a = 0; a < A; ++a) {
    for (int t = history; t < T; ++t) {
      for (int c = 0; c < kStateDim; ++c) {
        const double z = normal(rng);
        if (truth.valid(a, t) && !out.conditioned(a, t)) init.at(a, t, c) = z;
      }
    }
  }

  RunOptions run_options;
  run_options.stats = stats;
  run_options.guidance = request.guidance;
  run_options.exemptions = exemptions;
  RunResult run_result = run(schedule, denoiser, init, to_map(record), overrides, run_options);

  out.metric = denormalize(run_result.scene, stats);
  for (int a = 0; a < A; ++a) {
    for (int t = 0; t < T; ++t) {
      if (!out.conditioned(a, t) || !truth.valid(a, t)) continue;
      std::copy(truth.token(a, t).begin(), truth.token(a, t).end(), out.metric.token(a, t).begin());
    }
  }
  for (const Override& ov : overrides) {
    const auto& applied = run_result.trace.steps;
    for (const StepRecord& s : applied) {
      if (std::find(s.overrides_applied.begin(), s.overrides_applied.end(), ov.target) !=
          s.overrides_applied.end()) {
        std::copy(ov.state.begin(), ov.state.end(), out.metric.token(ov.target.agent, ov.target.frame).begin());
      }
    }
  }
  out.record = from_tensor(record, out.metric);
  for (int a = 0; a < A; ++a) {
    for (int t = 0; t < T; ++t) {
      if (out.conditioned(a, t)) out.record.agents[a].states[t] = record.agents[a].states[t];
    }
  }
  out.record.meta.goals.clear();
  for (const TokenRef& g : out.goals) out.record.meta.goals.push_back({g.agent, g.frame});
  out.trace = std::move(run_result.trace);
  out.steps = schedule.steps();
  return out;
}

SceneTensor constant_velocity_rollout(const ScenarioRecord& record) {
  SceneTensor scene = to_tensor(record);
  const int history = record.meta.conditioned_frames();
  const double dt = record.meta.dt_s;
  for (int a = 0; a < scene.agents(); ++a) {
    int last = -1;
    for (int t = 0; t < history; ++t) {
      if (scene.valid(a, t)) last = t;
    }
    for (int t = history; t < scene.frames(); ++t) {
      if (!scene.valid(a, t)) continue;
      if (last < 0) continue;
      const auto src = scene.token(a, last);
      auto dst = scene.token(a, t);
      std::copy(src.begin(), src.end(), dst.begin());
      const double elapsed = (t - last) * dt;
      dst[kX] += src[kVx] * elapsed;
      dst[kY] += src[kVy] * elapsed;
    }
  }
  return scene;
}

}  // namespace scenegen
