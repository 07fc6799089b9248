#include <stdexcept>

#include "scenegen/denoiser.hpp"

namespace scenegen {

OracleDenoiser::OracleDenoiser(SceneTensor clean_normalized) : clean_(std::move(clean_normalized)) {
  if (clean_.agents() == 0 && clean_.frames() == 0) {
    throw std::invalid_argument("oracle denoiser: missing ground truth");
  }
}

OracleDenoiser::OracleDenoiser(SceneTensor clean_normalized, SceneTensor true_eps)
    : OracleDenoiser(std::move(clean_normalized)) {
  if (true_eps.agents() != clean_.agents() || true_eps.frames() != clean_.frames()) {
    throw std::invalid_argument("oracle denoiser: noise shape does not match ground truth");
  }
  eps_ = std::move(true_eps);
  has_eps_ = true;
}

SceneTensor OracleDenoiser::predict(const SceneTensor& noisy, const NoiseMatrix& k,
                                    const MapTokens&) const {
  if (noisy.agents() != clean_.agents() || noisy.frames() != clean_.frames() ||
      k.agents() != clean_.agents() || k.frames() != clean_.frames()) {
    throw std::invalid_argument("oracle denoiser: query shape does not match ground truth");
  }
  SceneTensor eps(noisy.agents(), noisy.frames());
  eps.valid_mask() = noisy.valid_mask();
  for (int a = 0; a < noisy.agents(); ++a) {
    for (int t = 0; t < noisy.frames(); ++t) {
      if (!noisy.valid(a, t)) continue;
      const double si = NoiseSchedule::sigma(k(a, t));
      const double al = NoiseSchedule::alpha(k(a, t));
      for (int c = 0; c < kStateDim; ++c) {
        if (si > kSingularAlpha) {
          eps.at(a, t, c) = (noisy.at(a, t, c) - al * clean_.at(a, t, c)) / si;
        } else {
          eps.at(a, t, c) = has_eps_ ? eps_.at(a, t, c) : 0.0;
        }
      }
    }
  }
  return eps;
}

}  // namespace scenegen
