#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "scenegen/model.hpp"
#include "scenegen/record.hpp"

namespace scenegen {

// Fractions of examples drawn under each noise-matrix pattern; normalized on use.
struct NoisePolicy {
  double independent = 0.5;     // every token uniform in [1/M, 1]
  // History and current frames at 0, the rest at one level drawn uniform in [1/M, 1].
  double history_clean = 0.25;
  double history_goals = 0.25;  // as above plus random goal tokens at 0
  double goal_probability = 0.3;
};

struct TrainConfig {
  double learning_rate = 1e-3;
  int warmup_steps = 100;
  int total_steps = 2000;
  int batch_size = 16;
  double weight_decay = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  double grad_clip = 1.0;
  int validation_every = 200;
  std::uint64_t seed = 0;
  NoisePolicy policy;

  void validate() const;
};

struct TrainLog {
  int step = 0;
  double loss = 0.0;
  double learning_rate = 0.0;
  std::optional<double> validation_loss;
};

class DivergenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// One prepared training example in normalized units.
struct TrainExample {
  SceneTensor scene;
  MapSet map;
  int conditioned_frames = 0;
};

std::vector<TrainExample> prepare_examples(std::span<const ScenarioRecord> records,
                                           const ChannelStats& stats);

// Noise matrix drawn under the policy for one example; invalid tokens get level 0.
NoiseMatrix sample_noise_matrix(const TrainExample& example, const NoisePolicy& policy,
                                int grid_size, std::mt19937_64& rng);

// Learning rate after `step` updates: linear warmup then cosine decay to zero.
double learning_rate_at(const TrainConfig& config, int step);

// Masked epsilon loss of the model on a fixed set of examples; deterministic in `seed`.
double evaluation_loss(const SceneDenoiser& model, std::span<const TrainExample> examples,
                       const NoisePolicy& policy, std::uint64_t seed);

// AdamW over batches of examples. Weights are kept representable in float32 so that a
// saved checkpoint reloads bit-identically. Throws DivergenceError when the loss stays
// above 1e3 (or non-finite) for 100 consecutive steps.
std::vector<TrainLog> train(SceneDenoiser& model, std::span<const TrainExample> train_set,
                            std::span<const TrainExample> validation_set,
                            const TrainConfig& config,
                            const std::function<void(const TrainLog&)>& on_log = {});

}  // namespace scenegen
