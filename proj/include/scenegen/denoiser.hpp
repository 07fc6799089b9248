#pragma once

#include <Eigen/Core>

#include "scenegen/diffusion.hpp"
#include "scenegen/scene.hpp"

namespace scenegen {

// Fixed-length map encoding (Q x H); empty for denoisers that ignore the map.
struct MapTokens {
  Eigen::MatrixXd tokens;
};

// Epsilon predictor. `noisy` is in normalized units and carries the validity mask;
// outputs at invalid tokens are ignored by every consumer.
class Denoiser {
 public:
  virtual ~Denoiser() = default;
  virtual MapTokens encode_map(const MapSet& map) const = 0;
  virtual SceneTensor predict(const SceneTensor& noisy, const NoiseMatrix& k,
                              const MapTokens& map) const = 0;
};

// Test harness predictor that inverts the forward process against a known clean scene:
// eps = (x - alpha(k) x0) / sigma(k). Where sigma(k) <= 1e-6 it returns the stored noise
// from add_noise when given, otherwise zero.
class OracleDenoiser final : public Denoiser {
 public:
  explicit OracleDenoiser(SceneTensor clean_normalized);
  OracleDenoiser(SceneTensor clean_normalized, SceneTensor true_eps);

  MapTokens encode_map(const MapSet&) const override { return {}; }
  SceneTensor predict(const SceneTensor& noisy, const NoiseMatrix& k,
                      const MapTokens& map) const override;

 private:
  SceneTensor clean_;
  SceneTensor eps_;
  bool has_eps_ = false;
};

}  // namespace scenegen
