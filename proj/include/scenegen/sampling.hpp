#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include "scenegen/record.hpp"
#include "scenegen/scheduler.hpp"

namespace scenegen {

struct SampleRequest {
  Strategy strategy = Strategy::kFullSequence;
  int grid_size = 32;
  // When positive, full-sequence sampling over this many levels of the grid instead.
  int reduced_steps = 0;
  // Probability that an agent's last valid future frame is held as a goal.
  double goal_rate = 0.0;
  GuidanceConfig guidance = GuidanceConfig::disabled();
  std::uint64_t seed = 0;
};

struct SampleResult {
  ScenarioRecord record;
  SceneTensor metric;
  // History, current frame and goal tokens.
  TokenMask conditioned;
  std::vector<TokenRef> goals;
  Trace trace;
  int steps = 0;
};

// Last valid future frame of each agent, kept with probability `rate`.
std::vector<TokenRef> draw_goals(const ScenarioRecord& record, double rate, std::mt19937_64& rng);

// Generates the future frames of `record` with its history (and goals) as conditioning.
// Validity of future tokens follows the record. Conditioned tokens come back exactly as
// they went in. `extra_goals` are added to the drawn ones.
SampleResult sample_scenario(const ScenarioRecord& record, const Denoiser& denoiser,
                             const ChannelStats& stats, const SampleRequest& request,
                             std::span<const TokenRef> extra_goals = {},
                             std::span<const Override> overrides = {},
                             const PairExemptions& exemptions = {});

// Constant-velocity extrapolation from each agent's last valid conditioned frame.
SceneTensor constant_velocity_rollout(const ScenarioRecord& record);

}  // namespace scenegen
