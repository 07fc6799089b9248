#pragma once

#include <compare>
#include <span>
#include <string>
#include <vector>

#include "scenegen/denoiser.hpp"
#include "scenegen/diffusion.hpp"
#include "scenegen/guidance.hpp"
#include "scenegen/scene.hpp"

namespace scenegen {

enum class Strategy { kFullSequence, kAutoregressive, kPyramidal, kTrapezoidal };

// "full", "ar", "pyramidal", "trapezoidal".
std::string to_string(Strategy s);
Strategy strategy_from_string(const std::string& name);

struct TokenRef {
  int agent = 0;
  int frame = 0;
  auto operator<=>(const TokenRef&) const = default;
};

struct ScheduleOptions {
  // Tokens held at level 0 in every slice.
  std::vector<TokenRef> goals;
  // Trapezoidal only: accept a schedule anchored on the last frame without goal tokens.
  bool designated_terminal = false;
};

// Stack of noise matrices. slice(0) is the level before the first step (1 on every
// generated token, 0 on history and goals); sampling step m moves each token from
// slice(m - 1) to slice(m), m = 1..steps().
class ScheduleMatrix {
 public:
  ScheduleMatrix(Strategy strategy, int agents, int history_frames, int generated_frames,
                 int grid_size);

  Strategy strategy() const { return strategy_; }
  int agents() const { return agents_; }
  int history_frames() const { return history_; }
  int generated_frames() const { return generated_; }
  int total_frames() const { return history_ + generated_; }
  int grid_size() const { return grid_; }
  int steps() const { return static_cast<int>(slices_.size()) - 1; }

  const NoiseMatrix& slice(int m) const { return slices_.at(m); }
  // First step at which the token reaches 0; 0 for tokens that start at 0.
  int pop_step(int agent, int frame) const;
  bool is_goal(int agent, int frame) const;

  // Monotone, conditioned tokens at 0, initial slice 1 on generated tokens, every
  // generated token reaches 0 exactly once and stays there. Throws std::logic_error.
  void validate() const;

  std::vector<NoiseMatrix>& mutable_slices() { return slices_; }
  std::vector<TokenRef>& mutable_goals() { return goals_; }

 private:
  Strategy strategy_;
  int agents_;
  int history_;
  int generated_;
  int grid_;
  std::vector<NoiseMatrix> slices_;
  std::vector<TokenRef> goals_;
};

// Generated frames are tensor frames history_frames .. history_frames + F - 1; frame
// index tau = 1..F below refers to them in order.
//   full:          slice_m = max(0, 1 - m/M), M steps
//   autoregressive: frame tau runs 1 - j/M during steps (tau-1)M + j, F*M steps
//   pyramidal:     admission e = tau, level clamp(1 - (m - e)/M), F + M steps
//   trapezoidal:   admission e = min(tau, F + 1 - tau), ceil(F/2) + M steps
ScheduleMatrix build_schedule(Strategy strategy, int agents, int history_frames,
                              int generated_frames, int grid_size,
                              const ScheduleOptions& options = {});

// Full-sequence schedule over an explicit descending level grid (1 ... 0), used for
// step skipping.
ScheduleMatrix build_schedule_from_grid(int agents, int history_frames, int generated_frames,
                                        std::span<const double> levels,
                                        const ScheduleOptions& options = {});

struct Override {
  TokenRef target;
  TokenState state{};  // metric units
  int arrival_step = 1;
};

struct StepRecord {
  int m = 0;
  int in_flight = 0;
  std::vector<TokenRef> pops;
  std::vector<TokenRef> overrides_applied;
  std::vector<TokenRef> overrides_rejected;
};

struct Trace {
  std::vector<StepRecord> steps;

  // Step at which the token was emitted, 0 when never popped during the run.
  int pop_step(TokenRef token) const;
  std::string to_jsonl() const;
};

struct RunOptions {
  ChannelStats stats;
  GuidanceConfig guidance = GuidanceConfig::disabled();
  PairExemptions exemptions;
};

struct RunResult {
  SceneTensor scene;  // normalized
  Trace trace;
};

// Runs the chunk lifecycle over every schedule step: apply arriving overrides (level
// forced to 0 from then on), predict, reverse step, pop tokens reaching 0. The
// full-sequence strategy rejects every override; so does a target already at level 0.
RunResult run(const ScheduleMatrix& schedule, const Denoiser& denoiser,
              const SceneTensor& scene_init, const MapSet& map,
              std::span<const Override> overrides, const RunOptions& options);

// Steps from an override arriving at `override_step` until the next pop that can reflect
// it (the arrival step itself counts as one). Full-sequence returns steps() (restart).
int reaction_latency(const ScheduleMatrix& schedule, int override_step);

// reaction_latency for an override arriving one step after the first pop, when a
// pipelined schedule has reached its steady state.
int steady_reaction_latency(const ScheduleMatrix& schedule);

}  // namespace scenegen
