#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "scenegen/metrics.hpp"
#include "scenegen/record.hpp"
#include "scenegen/scheduler.hpp"

namespace scenegen {

struct LoopConfig {
  double duration_s = 8.0;
  Strategy strategy = Strategy::kPyramidal;
  int stride = 1;
  int grid_size = 32;
  // Emitted frames of every agent roll into the next window's history. When off, non-ego
  // history comes from the engine's log where it has one.
  bool history_update = true;
  GuidanceConfig guidance = GuidanceConfig::disabled();
  std::uint64_t seed = 0;

  void validate(double dt) const;
};

// Drives the ego. `history` holds the latest frames of the rollout; the result is the ego
// state for absolute rollout frame `frame`, one dt after the last history frame.
class Planner {
 public:
  virtual ~Planner() = default;
  virtual AgentState next(const ScenarioRecord& history, int ego, int frame, double dt) = 0;
};

// Clamps a proposed next state to |accel| <= 4 m/s^2 and |heading change| <= 0.5 rad per
// frame relative to `prev`, moving with the clamped velocity.
AgentState bound_action(const AgentState& prev, const AgentState& proposed, double dt);

class ConstantVelocityPlanner final : public Planner {
 public:
  AgentState next(const ScenarioRecord& history, int ego, int frame, double dt) override;
};

// Pure pursuit along the lane nearest the ego at a target speed.
class LaneFollowPlanner final : public Planner {
 public:
  explicit LaneFollowPlanner(double target_speed = 10.0, double lookahead = 8.0)
      : target_speed_(target_speed), lookahead_(lookahead) {}
  AgentState next(const ScenarioRecord& history, int ego, int frame, double dt) override;

 private:
  double target_speed_;
  double lookahead_;
};

// Brakes at the given rate along the current heading until stopped.
class HardStopPlanner final : public Planner {
 public:
  explicit HardStopPlanner(double decel = 4.0) : decel_(decel) {}
  AgentState next(const ScenarioRecord& history, int ego, int frame, double dt) override;

 private:
  double decel_;
};

// Replays the ego track of a log frame by frame.
class LogReplayPlanner final : public Planner {
 public:
  explicit LogReplayPlanner(ScenarioRecord log) : log_(std::move(log)) {}
  AgentState next(const ScenarioRecord& history, int ego, int frame, double dt) override;

 private:
  ScenarioRecord log_;
};

// Supplies the denoiser used to advance a window starting at rollout frame `start`.
class WorldEngine {
 public:
  virtual ~WorldEngine() = default;
  virtual std::shared_ptr<const Denoiser> denoiser_for(const ScenarioRecord& window,
                                                       int start) const = 0;
  virtual const ChannelStats& stats() const = 0;
  // Log frames backing the rollout, when the engine has them.
  virtual const ScenarioRecord* log() const { return nullptr; }
};

class ModelEngine final : public WorldEngine {
 public:
  ModelEngine(std::shared_ptr<const Denoiser> model, ChannelStats stats)
      : model_(std::move(model)), stats_(stats) {}
  std::shared_ptr<const Denoiser> denoiser_for(const ScenarioRecord&, int) const override {
    return model_;
  }
  const ChannelStats& stats() const override { return stats_; }

 private:
  std::shared_ptr<const Denoiser> model_;
  ChannelStats stats_;
};

// Test engine: an oracle over the log window starting at the same frame.
class OracleEngine final : public WorldEngine {
 public:
  OracleEngine(ScenarioRecord log, ChannelStats stats) : log_(std::move(log)), stats_(stats) {}
  std::shared_ptr<const Denoiser> denoiser_for(const ScenarioRecord& window, int start) const override;
  const ChannelStats& stats() const override { return stats_; }
  const ScenarioRecord* log() const override { return &log_; }

 private:
  ScenarioRecord log_;
  ChannelStats stats_;
};

struct StepOutput {
  ScenarioRecord window;                          // advanced by the stride
  std::vector<std::vector<std::optional<AgentState>>> emitted;  // [frame][agent]
  int steps = 0;
  int latency = 0;
  bool action_rejected = false;
};

// Advances `window` (history plus future frames at the engine's layout) by one stride.
// `actions` holds the ego state for each of the next `stride` frames. The ego rows of the
// emitted frames equal the actions exactly; a non-finite action is replaced by
// constant-velocity coasting.
StepOutput step_world(const ScenarioRecord& window, int ego,
                      const std::vector<AgentState>& actions, const WorldEngine& engine,
                      const LoopConfig& config, int start);

struct LoopResult {
  ScenarioRecord rollout;
  MetricReport report;
  std::vector<int> latencies;  // per iteration
};

// Alternates planner and world for the configured duration starting from the first
// conditioned frames of `initial`.
LoopResult run_loop(const ScenarioRecord& initial, Planner& planner, const WorldEngine& engine,
                    const LoopConfig& config);

}  // namespace scenegen
