#pragma once

#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "scenegen/autograd.hpp"
#include "scenegen/denoiser.hpp"

namespace scenegen {

struct ModelConfig {
  int hidden = 64;
  int block_pairs = 2;
  int heads = 4;
  int map_queries = 16;
  int ff_mult = 4;
  // Noise levels are discretized on this lattice for the rotary encoding.
  int grid_size = 32;
  double rope_base = 100.0;
  // Frame spacing used to extrapolate clean tokens into the prior features.
  double dt_s = 0.5;
  // AdaLN-zero gates and a zero output head; off only for gradient checks.
  bool zero_init = true;
  std::uint64_t seed = 0;

  // Throws std::invalid_argument on non-positive sizes or hidden % heads != 0, or when
  // the head width cannot be split into two rotary halves.
  void validate() const;
  bool operator==(const ModelConfig&) const = default;
};

// Per-token inputs: the 8 noisy state channels, validity flag, vehicle type, then the
// constant-velocity prior: the agent's latest clean (level 0) token at or before this
// frame extrapolated to it (8), the noise implied by that anchor (x - alpha*anchor)/sigma
// clipped to +-10 (8), an anchor-present flag and the frame gap / 16.
inline constexpr int kInputFeatures = 3 * kStateDim + 4;
// Lane point features: position (2), unit tangent (2), lane type one-hot.
inline constexpr int kMapFeatures = 4 + kLaneTypeCount;

// One scene of a batched forward pass.
struct ForwardItem {
  const SceneTensor* noisy = nullptr;
  const NoiseMatrix* k = nullptr;
  nn::Var map;  // Q x H map tokens on the same tape
};

// Valid tokens of a batch in row order.
struct RowRef {
  int item = 0;
  int agent = 0;
  int frame = 0;
};

// Thrown when a forward pass produces NaN or infinite activations.
class NonFiniteActivations : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Spatio-temporal transformer epsilon predictor. Only valid tokens enter the network,
// so invalid tokens neither attend nor are attended; their outputs are zero.
class SceneDenoiser final : public Denoiser {
 public:
  SceneDenoiser(const ModelConfig& config, const ChannelStats& stats);

  const ModelConfig& config() const { return config_; }
  const ChannelStats& stats() const { return stats_; }

  std::vector<nn::Parameter>& parameters() { return params_; }
  const std::vector<nn::Parameter>& parameters() const { return params_; }
  size_t parameter_count() const;

  MapTokens encode_map(const MapSet& map) const override;
  SceneTensor predict(const SceneTensor& noisy, const NoiseMatrix& k,
                      const MapTokens& map) const override;

  // Differentiable building blocks used by training and gradient checks.
  nn::Var encode_map(nn::Tape& tape, const MapSet& map) const;
  nn::Var forward(nn::Tape& tape, std::span<const ForwardItem> items,
                  std::vector<RowRef>& rows) const;

 private:
  struct Linear {
    int w = -1;
    int b = -1;
  };
  struct Block {
    Linear modulation, qkv, out, ff1, ff2;
  };

  int add_param(const std::string& name, int rows, int cols, double scale);
  Linear add_linear(const std::string& name, int in, int out, double gain = 1.0);
  nn::Var bind(nn::Tape& tape, int index) const;
  // Writes the 2 * kStateDim + 2 prior features of token (a, t); left zero without anchor.
  void prior_features(const SceneTensor& s, const NoiseMatrix& k, int a, int t, double* out) const;
  nn::Var apply(nn::Tape& tape, const Linear& l, nn::Var x) const;
  nn::Var block(nn::Tape& tape, const Block& b, nn::Var x, nn::Var cond,
                std::shared_ptr<const nn::AttentionLayout> layout,
                std::shared_ptr<const nn::RotaryTable> rope, const std::string& tag) const;
  nn::Var self_attention(nn::Tape& tape, const Linear& qkv, const Linear& out, nn::Var x,
                         std::shared_ptr<const nn::AttentionLayout> layout,
                         std::shared_ptr<const nn::RotaryTable> rope) const;

  ModelConfig config_;
  ChannelStats stats_;
  std::vector<nn::Parameter> params_;

  Linear input_, noise1_, noise2_;
  Linear map_point_;
  int map_latents_ = -1;
  Linear map_q_, map_k_, map_v_, map_o_, map_ff1_, map_ff2_, map_self_qkv_, map_self_o_;
  Linear cross_q_, cross_kv_, cross_o_;
  std::vector<Block> blocks_;  // temporal, spatial, temporal, ...
  Linear final_mod_, head_, skip_;
};

// Sinusoidal features of the noise level scaled by 1000; width `dim` (even).
nn::Matrix noise_level_features(std::span<const double> levels, int dim);

}  // namespace scenegen
