#include <doctest.h>

#include <cmath>
#include <numbers>

#include "scenegen/denoiser.hpp"
#include "scenegen/diffusion.hpp"
#include "support.hpp"

using namespace scenegen;
using testing::Rng;

TEST_CASE("schedule endpoints and variance preservation") {
  CHECK(NoiseSchedule::alpha(0.0) == 1.0);
  CHECK(NoiseSchedule::sigma(0.0) == 0.0);
  CHECK(NoiseSchedule::alpha(1.0) == 0.0);
  CHECK(NoiseSchedule::sigma(1.0) == 1.0);
  double previous = 2.0;
  for (int i = 0; i <= 1000; ++i) {
    const double t = i / 1000.0;
    const double a = NoiseSchedule::alpha(t);
    const double s = NoiseSchedule::sigma(t);
    CHECK(std::abs(a * a + s * s - 1.0) <= 1e-12);
    CHECK(a < previous);
    previous = a;
  }
  CHECK(NoiseSchedule::alpha(0.5) == doctest::Approx(std::cos(std::numbers::pi / 4)));
}

TEST_CASE("add_noise endpoints") {
  Rng rng(1);
  const SceneTensor x0 = testing::random_normalized(rng, 3, 6);
  std::mt19937_64 g(7);
  const NoisedScene clean = add_noise(x0, NoiseMatrix(3, 6, 0.0), g);
  CHECK(clean.noisy == x0);
  bool any_eps = false;
  for (double v : clean.eps.data()) any_eps = any_eps || v != 0.0;
  CHECK(any_eps);

  const NoisedScene pure = add_noise(x0, NoiseMatrix(3, 6, 1.0), g);
  for (int a = 0; a < 3; ++a) {
    for (int t = 0; t < 6; ++t) {
      for (int c = 0; c < kStateDim; ++c) {
        if (x0.valid(a, t)) {
          CHECK(pure.noisy.at(a, t, c) == pure.eps.at(a, t, c));
        } else {
          CHECK(pure.noisy.at(a, t, c) == 0.0);
        }
      }
    }
  }
}

TEST_CASE("add_noise at level 0.5 keeps unit variance") {
  // x0 ~ N(0,1) per channel; output variance alpha^2 + sigma^2 = 1.
  const int n = 100000 / kStateDim + 1;
  Rng rng(2);
  const SceneTensor x0 = testing::random_normalized(rng, 1, n, 1.0);
  std::mt19937_64 g(3);
  const NoisedScene out = add_noise(x0, NoiseMatrix(1, n, 0.5), g);
  double sum = 0, sq = 0;
  size_t count = 0;
  for (double v : out.noisy.data()) {
    sum += v;
    sq += v * v;
    ++count;
  }
  const double mean = sum / count;
  CHECK(sq / count - mean * mean == doctest::Approx(1.0).epsilon(0.02));
  const double a = std::cos(std::numbers::pi / 4);
  CHECK(out.noisy.at(0, 0, 0) == doctest::Approx(a * x0.at(0, 0, 0) + a * out.eps.at(0, 0, 0)));
}

TEST_CASE("add_noise rejects levels outside [0, 1] and is seed-deterministic") {
  Rng rng(4);
  const SceneTensor x0 = testing::random_normalized(rng, 2, 3);
  std::mt19937_64 g(0);
  NoiseMatrix k(2, 3, 0.5);
  k(1, 2) = 1.5;
  CHECK_THROWS_AS(add_noise(x0, k, g), std::invalid_argument);
  k(1, 2) = -0.1;
  CHECK_THROWS_AS(add_noise(x0, k, g), std::invalid_argument);

  std::mt19937_64 g1(9), g2(9);
  const NoiseMatrix half(2, 3, 0.5);
  CHECK(add_noise(x0, half, g1).noisy == add_noise(x0, half, g2).noisy);
}

TEST_CASE("masked_mse_loss examples") {
  Rng rng(5);
  const SceneTensor e = testing::random_normalized(rng, 2, 4, 1.0);
  const TokenMask all(2, 4, true);
  CHECK(masked_mse_loss(e, e, all, all).value == 0.0);

  SceneTensor pred(1, 1), truth(1, 1);
  pred.set_valid(0, 0, true);
  truth.set_valid(0, 0, true);
  pred.at(0, 0, 0) = 3.0;
  pred.at(0, 0, 1) = 4.0;
  const TokenMask one(1, 1, true);
  CHECK(masked_mse_loss(pred, truth, one, one).value == doctest::Approx(25.0 / 8.0));

  const LossValue empty = masked_mse_loss(e, e, TokenMask(2, 4, false), all);
  CHECK(empty.value == 0.0);
  CHECK(empty.empty_support);
  // Level-0 tokens carry no weight.
  CHECK(masked_mse_loss(pred, truth, one, TokenMask(1, 1, false)).value == 0.0);
}

TEST_CASE("reverse_step examples") {
  Rng rng(6);
  const SceneTensor x0 = testing::random_normalized(rng, 2, 5);
  for (double t : {0.1, 0.37, 0.5, 0.9, 31.0 / 32.0}) {
    std::mt19937_64 g(11);
    const NoiseMatrix k(2, 5, t);
    const NoisedScene noised = add_noise(x0, k, g);
    OracleDenoiser oracle(x0);
    const SceneTensor eps = oracle.predict(noised.noisy, k, {});
    SceneTensor carry(2, 5);
    const SceneTensor out = reverse_step(noised.noisy, k, NoiseMatrix(2, 5, 0.0), eps, carry);
    CHECK(testing::max_abs_diff(x0, out) <= 1e-9);
  }

  const SceneTensor noisy = testing::random_normalized(rng, 2, 5);
  const NoiseMatrix same(2, 5, 0.4);
  SceneTensor carry(2, 5);
  CHECK(reverse_step(noisy, same, same, testing::random_normalized(rng, 2, 5, 1.0), carry) == noisy);

  NoiseMatrix up(2, 5, 0.4);
  up(0, 0) = 0.5;
  CHECK_THROWS_AS(reverse_step(noisy, same, up, noisy, carry), std::invalid_argument);
}

TEST_CASE("reverse_step from level 1 uses the carried estimate") {
  SceneTensor noisy(1, 1), eps(1, 1), carry(1, 1);
  noisy.set_valid(0, 0, true);
  eps.set_valid(0, 0, true);
  for (int c = 0; c < kStateDim; ++c) {
    noisy.at(0, 0, c) = 0.3 * c - 1.0;
    eps.at(0, 0, c) = 0.1 * c;
    carry.at(0, 0, c) = 0.5;
  }
  const double s = 0.75;
  const SceneTensor out = reverse_step(noisy, NoiseMatrix(1, 1, 1.0), NoiseMatrix(1, 1, s), eps, carry);
  for (int c = 0; c < kStateDim; ++c) {
    CHECK(out.at(0, 0, c) ==
          doctest::Approx(NoiseSchedule::alpha(s) * 0.5 + NoiseSchedule::sigma(s) * eps.at(0, 0, c)));
  }
}

TEST_CASE("subsample_grid examples") {
  const auto full = subsample_grid(32, 32);
  REQUIRE(full.size() == 33);
  for (int i = 0; i <= 32; ++i) CHECK(full[i] == doctest::Approx(1.0 - i / 32.0));

  const auto reduced = subsample_grid(32, 18);
  REQUIRE(reduced.size() == 19);
  CHECK(reduced.front() == 1.0);
  CHECK(reduced.back() == 0.0);
  for (size_t i = 0; i < reduced.size(); ++i) {
    // Oracle: index round(i * 32 / 18) on the 32-level lattice.
    const double index = std::round(i * 32.0 / 18.0);
    CHECK(reduced[i] == doctest::Approx(1.0 - index / 32.0));
    if (i > 0) CHECK(reduced[i] < reduced[i - 1]);
  }

  const auto single = subsample_grid(32, 1);
  REQUIRE(single.size() == 2);
  CHECK(single[0] == 1.0);
  CHECK(single[1] == 0.0);
  CHECK_THROWS_AS(subsample_grid(32, 0), std::invalid_argument);
  CHECK_THROWS_AS(subsample_grid(32, 33), std::invalid_argument);
}

TEST_CASE("oracle predictor identities") {
  Rng rng(7);
  const SceneTensor x0 = testing::random_normalized(rng, 3, 4);
  std::mt19937_64 g(1);
  NoiseMatrix k(3, 4);
  for (int a = 0; a < 3; ++a) {
    for (int t = 0; t < 4; ++t) k(a, t) = testing::uniform(rng, 0.05, 1.0);
  }
  k(0, 0) = 1.0;
  const NoisedScene n = add_noise(x0, k, g);
  const SceneTensor eps = OracleDenoiser(x0).predict(n.noisy, k, {});
  CHECK(testing::max_abs_diff(n.eps, eps) <= 1e-9);
  for (int c = 0; c < kStateDim; ++c) {
    if (x0.valid(0, 0)) CHECK(eps.at(0, 0, c) == n.noisy.at(0, 0, c));
  }
  // At level 0 the stored noise is returned when available.
  const NoiseMatrix zero(3, 4, 0.0);
  const NoisedScene z = add_noise(x0, zero, g);
  CHECK(OracleDenoiser(x0, z.eps).predict(z.noisy, zero, {}) == z.eps);
}

TEST_CASE("property: any monotone level sequence recovers x0 with the oracle") {
  Rng rng(8);
  for (int trial = 0; trial < 100; ++trial) {
    const int A = testing::uniform_int(rng, 1, 4);
    const int T = testing::uniform_int(rng, 1, 8);
    const SceneTensor x0 = testing::random_normalized(rng, A, T);
    std::vector<double> levels{1.0};
    while (levels.back() > 0.0) {
      levels.push_back(std::max(0.0, levels.back() - testing::uniform(rng, 0.01, 0.4)));
    }
    std::normal_distribution<double> normal(0.0, 1.0);
    SceneTensor x = x0;
    for (double& v : x.data()) v = normal(rng);
    for (int a = 0; a < A; ++a) {
      for (int t = 0; t < T; ++t) {
        if (!x0.valid(a, t)) std::fill(x.token(a, t).begin(), x.token(a, t).end(), 0.0);
      }
    }
    OracleDenoiser oracle(x0);
    SceneTensor carry(A, T);
    for (size_t i = 0; i + 1 < levels.size(); ++i) {
      const NoiseMatrix now(A, T, levels[i]), next(A, T, levels[i + 1]);
      x = reverse_step(x, now, next, oracle.predict(x, now, {}), carry);
    }
    CHECK(testing::max_abs_diff(x0, x) <= 1e-7);
  }
}
