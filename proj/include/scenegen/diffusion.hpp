#pragma once

#include <functional>
#include <random>
#include <vector>

#include "scenegen/scene.hpp"

namespace scenegen {

// Per-token noise level in [0, 1]; 0 is clean/conditioned, 1 is pure noise.
class NoiseMatrix {
 public:
  NoiseMatrix() = default;
  NoiseMatrix(int agents, int frames, double fill = 0.0)
      : agents_(agents), frames_(frames), levels_(static_cast<size_t>(agents) * frames, fill) {}

  int agents() const { return agents_; }
  int frames() const { return frames_; }
  double operator()(int a, int t) const { return levels_[index(a, t)]; }
  double& operator()(int a, int t) { return levels_[index(a, t)]; }
  const std::vector<double>& levels() const { return levels_; }

  // Throws std::invalid_argument when any entry is outside [0, 1].
  void check_range() const;
  bool operator==(const NoiseMatrix&) const = default;

 private:
  size_t index(int a, int t) const { return static_cast<size_t>(a) * frames_ + t; }
  int agents_ = 0;
  int frames_ = 0;
  std::vector<double> levels_;
};

// Cosine variance-preserving schedule: alpha(t) = cos(pi t / 2), sigma(t) = sin(pi t / 2),
// with the endpoints pinned exactly.
struct NoiseSchedule {
  int grid_size = 32;

  static double alpha(double t);
  static double sigma(double t);
};

inline constexpr double kSingularAlpha = 1e-6;

struct NoisedScene {
  SceneTensor noisy;
  SceneTensor eps;
};

// Token (a, t) becomes alpha(k) x0 + sigma(k) eps with eps ~ N(0, I). Invalid
// tokens stay untouched and get zero noise.
NoisedScene add_noise(const SceneTensor& scene0, const NoiseMatrix& k, std::mt19937_64& rng);

struct LossValue {
  double value = 0.0;
  bool empty_support = false;
};

// Mean over weighted valid tokens of ||pred - truth||^2 / D. Tokens whose weight mask
// is false (level 0) contribute nothing.
LossValue masked_mse_loss(const SceneTensor& eps_pred, const SceneTensor& eps_true,
                          const TokenMask& valid, const TokenMask& loss_weight);

TokenMask noisy_token_mask(const NoiseMatrix& k);

// Optional correction of the clean-sample estimate inside a reverse step. Receives the
// estimate and the mask of tokens being moved this step.
using X0Corrector = std::function<void(SceneTensor& x0_hat, const TokenMask& moving)>;

// Deterministic implicit step from level k_now to k_next per token. `x0_carry` holds the
// last clean estimate per token and is used where alpha(k_now) vanishes; it is updated
// for every token whose estimate is recomputed. Tokens with k_now == k_next and invalid
// tokens come back bit-identical.
SceneTensor reverse_step(const SceneTensor& noisy, const NoiseMatrix& k_now,
                         const NoiseMatrix& k_next, const SceneTensor& eps_hat,
                         SceneTensor& x0_carry, const X0Corrector& corrector = {});

// Descending level grid from 1 to 0 with m_reduced + 1 entries taken at evenly spaced
// indices of the m_full grid.
std::vector<double> subsample_grid(int m_full, int m_reduced);

}  // namespace scenegen
