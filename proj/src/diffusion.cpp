#include "scenegen/diffusion.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>

namespace scenegen {

void NoiseMatrix::check_range() const {
  for (size_t i = 0; i < levels_.size(); ++i) {
    const double k = levels_[i];
    if (!(k >= 0.0 && k <= 1.0)) {
      throw std::invalid_argument("noise level " + std::to_string(k) + " outside [0, 1] at agent " +
                                  std::to_string(i / frames_) + ", frame " +
                                  std::to_string(i % frames_));
    }
  }
}

double NoiseSchedule::alpha(double t) {
  if (t <= 0.0) return 1.0;
  if (t >= 1.0) return 0.0;
  return std::cos(0.5 * std::numbers::pi * t);
}

double NoiseSchedule::sigma(double t) {
  if (t <= 0.0) return 0.0;
  if (t >= 1.0) return 1.0;
  return std::sin(0.5 * std::numbers::pi * t);
}

namespace {

void check_shapes(const SceneTensor& s, const NoiseMatrix& k, const char* what) {
  if (s.agents() != k.agents() || s.frames() != k.frames()) {
    throw std::invalid_argument(std::string(what) + ": noise matrix shape does not match scene");
  }
}

}  // namespace

NoisedScene add_noise(const SceneTensor& scene0, const NoiseMatrix& k, std::mt19937_64& rng) {
  check_shapes(scene0, k, "add_noise");
  k.check_range();
  std::normal_distribution<double> normal(0.0, 1.0);
  NoisedScene out{scene0, SceneTensor(scene0.agents(), scene0.frames())};
  out.eps.valid_mask() = scene0.valid_mask();
  for (int a = 0; a < scene0.agents(); ++a) {
    for (int t = 0; t < scene0.frames(); ++t) {
      // Draw for every token so the stream does not depend on the mask.
      TokenState eps;
      for (double& e : eps) e = normal(rng);
      if (!scene0.valid(a, t)) continue;
      const double al = NoiseSchedule::alpha(k(a, t));
      const double si = NoiseSchedule::sigma(k(a, t));
      for (int c = 0; c < kStateDim; ++c) {
        out.eps.at(a, t, c) = eps[c];
        out.noisy.at(a, t, c) = al * scene0.at(a, t, c) + si * eps[c];
      }
    }
  }
  return out;
}

TokenMask noisy_token_mask(const NoiseMatrix& k) {
  TokenMask m(k.agents(), k.frames());
  for (int a = 0; a < k.agents(); ++a) {
    for (int t = 0; t < k.frames(); ++t) m.set(a, t, k(a, t) > 0.0);
  }
  return m;
}

LossValue masked_mse_loss(const SceneTensor& eps_pred, const SceneTensor& eps_true,
                          const TokenMask& valid, const TokenMask& loss_weight) {
  if (eps_pred.agents() != eps_true.agents() || eps_pred.frames() != eps_true.frames() ||
      valid.agents() != eps_true.agents() || valid.frames() != eps_true.frames() ||
      loss_weight.agents() != eps_true.agents() || loss_weight.frames() != eps_true.frames()) {
    throw std::invalid_argument("masked_mse_loss: shape mismatch");
  }
  double sum = 0.0;
  size_t count = 0;
  for (int a = 0; a < eps_true.agents(); ++a) {
    for (int t = 0; t < eps_true.frames(); ++t) {
      if (!valid(a, t) || !loss_weight(a, t)) continue;
      for (int c = 0; c < kStateDim; ++c) {
        const double d = eps_pred.at(a, t, c) - eps_true.at(a, t, c);
        sum += d * d;
      }
      ++count;
    }
  }
  if (count == 0) return {0.0, true};
  return {sum / (static_cast<double>(count) * kStateDim), false};
}

SceneTensor reverse_step(const SceneTensor& noisy, const NoiseMatrix& k_now,
                         const NoiseMatrix& k_next, const SceneTensor& eps_hat,
                         SceneTensor& x0_carry, const X0Corrector& corrector) {
  check_shapes(noisy, k_now, "reverse_step");
  check_shapes(noisy, k_next, "reverse_step");
  check_shapes(eps_hat, k_now, "reverse_step");
  check_shapes(x0_carry, k_now, "reverse_step");
  const int A = noisy.agents();
  const int T = noisy.frames();
  for (int a = 0; a < A; ++a) {
    for (int t = 0; t < T; ++t) {
      if (k_next(a, t) > k_now(a, t)) {
        throw std::invalid_argument("reverse_step: noise level increases at agent " +
                                    std::to_string(a) + ", frame " + std::to_string(t));
      }
    }
  }

  TokenMask moving(A, T);
  SceneTensor x0 = x0_carry;
  for (int a = 0; a < A; ++a) {
    for (int t = 0; t < T; ++t) {
      if (!noisy.valid(a, t) || k_now(a, t) == k_next(a, t)) continue;
      moving.set(a, t, true);
      const double al = NoiseSchedule::alpha(k_now(a, t));
      if (al > kSingularAlpha) {
        const double si = NoiseSchedule::sigma(k_now(a, t));
        for (int c = 0; c < kStateDim; ++c) {
          x0.at(a, t, c) = (noisy.at(a, t, c) - si * eps_hat.at(a, t, c)) / al;
        }
      }
    }
  }

  SceneTensor x0_raw;
  if (corrector) {
    x0_raw = x0;
    corrector(x0, moving);
  }

  SceneTensor out = noisy;
  for (int a = 0; a < A; ++a) {
    for (int t = 0; t < T; ++t) {
      if (!moving(a, t)) continue;
      const double t_now = k_now(a, t);
      const double s = k_next(a, t);
      const double al_s = NoiseSchedule::alpha(s);
      const double si_s = NoiseSchedule::sigma(s);
      const double al_t = NoiseSchedule::alpha(t_now);
      const double si_t = NoiseSchedule::sigma(t_now);
      for (int c = 0; c < kStateDim; ++c) {
        double eps = eps_hat.at(a, t, c);
        // A corrected estimate implies a different noise direction for this token.
        if (corrector && x0.at(a, t, c) != x0_raw.at(a, t, c) && si_t > kSingularAlpha) {
          eps = (noisy.at(a, t, c) - al_t * x0.at(a, t, c)) / si_t;
        }
        out.at(a, t, c) = al_s * x0.at(a, t, c) + si_s * eps;
        x0_carry.at(a, t, c) = x0.at(a, t, c);
      }
    }
  }
  return out;
}

std::vector<double> subsample_grid(int m_full, int m_reduced) {
  if (m_full < 1) throw std::invalid_argument("subsample_grid: full grid must have at least one step");
  if (m_reduced < 1) throw std::invalid_argument("subsample_grid: reduced grid must have at least one step");
  if (m_reduced > m_full) throw std::invalid_argument("subsample_grid: reduced grid exceeds full grid");
  std::vector<double> levels;
  levels.reserve(m_reduced + 1);
  for (int j = 0; j <= m_reduced; ++j) {
    // Integer rounding keeps every level on the 1/m_full lattice.
    const long idx = std::lround(static_cast<double>(j) * m_full / m_reduced);
    levels.push_back(1.0 - static_cast<double>(idx) / m_full);
  }
  levels.front() = 1.0;
  levels.back() = 0.0;
  return levels;
}

}  // namespace scenegen
