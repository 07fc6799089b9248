#include <doctest.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <memory>
#include <string>

#include "scenegen/checkpoint.hpp"
#include "scenegen/model.hpp"
#include "scenegen/train.hpp"
#include "gradcheck.hpp"
#include "support.hpp"

using namespace scenegen;
using testing::Rng;

namespace {

ModelConfig small_config(bool zero_init = false) {
  ModelConfig cfg;
  cfg.hidden = 16;
  cfg.block_pairs = 1;
  cfg.heads = 2;
  cfg.map_queries = 4;
  cfg.zero_init = zero_init;
  cfg.seed = 11;
  return cfg;
}

MapSet two_lanes() {
  MapSet m;
  for (int l = 0; l < 2; ++l) {
    Lane lane;
    lane.type = l == 0 ? LaneType::kDriving : LaneType::kMerge;
    for (int i = 0; i < 5; ++i) lane.points.emplace_back(i * 0.3, l * 0.8 + 0.05 * i * i);
    m.lanes.push_back(lane);
  }
  return m;
}

double max_abs(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) { return (a - b).cwiseAbs().maxCoeff(); }

std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / ("scenegen_test_" + name)).string();
}

std::string read_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(in), {});
}

void write_bytes(const std::string& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary);
  out << bytes;
}

std::string run_probe() {
  std::string out;
  FILE* pipe = popen(SCENEGEN_PROBE_PATH, "r");
  REQUIRE(pipe != nullptr);
  char buf[256];
  while (fgets(buf, sizeof(buf), pipe)) out += buf;
  CHECK(pclose(pipe) == 0);
  return out;
}

std::vector<TrainExample> straight_examples(int n, ChannelStats& stats) {
  std::vector<ScenarioRecord> records;
  for (int i = 0; i < n; ++i) records.push_back(testing::straight_record(2 + i % 3, 2 + i % 2, 6.0 + i));
  stats = fit_stats(records);
  return prepare_examples(records, stats);
}

}  // namespace

TEST_CASE("gradient check on a miniature model") {
  const auto result = testing::gradient_check(100, 1);
  CHECK(result.checked == 100);
  CHECK(result.failures == 0);
  CHECK(result.max_relative_error <= 1e-4);
}

TEST_CASE("map encoder: fixed size, lane-order invariant, masked points ignored") {
  SceneDenoiser model(small_config(), ChannelStats::identity());
  const MapSet map = two_lanes();
  const MapTokens tokens = model.encode_map(map);
  CHECK(tokens.tokens.rows() == 4);
  CHECK(tokens.tokens.cols() == 16);

  MapSet swapped = map;
  std::swap(swapped.lanes[0], swapped.lanes[1]);
  CHECK(max_abs(tokens.tokens, model.encode_map(swapped).tokens) <= 1e-6);

  MapSet masked = map;
  for (Lane& lane : masked.lanes) lane.point_valid.assign(lane.points.size(), 0);
  CHECK(model.encode_map(masked).tokens == model.encode_map(MapSet{}).tokens);

  MapSet partial = map;
  partial.lanes.push_back(map.lanes[0]);
  partial.lanes.back().point_valid.assign(map.lanes[0].points.size(), 0);
  CHECK(max_abs(tokens.tokens, model.encode_map(partial).tokens) <= 1e-12);
}

TEST_CASE("property: agent permutation equivariance") {
  SceneDenoiser model(small_config(), ChannelStats::identity());
  const MapTokens map = model.encode_map(two_lanes());
  Rng rng(2);
  for (int trial = 0; trial < 10; ++trial) {
    const int A = testing::uniform_int(rng, 2, 4), T = testing::uniform_int(rng, 2, 5);
    const SceneTensor x = testing::random_normalized(rng, A, T, 0.8);
    NoiseMatrix k(A, T);
    for (int a = 0; a < A; ++a) {
      for (int t = 0; t < T; ++t) k(a, t) = x.valid(a, t) ? testing::uniform(rng, 0, 1) : 0.0;
    }
    std::vector<int> perm(A);
    for (int a = 0; a < A; ++a) perm[a] = a;
    std::shuffle(perm.begin(), perm.end(), rng);
    SceneTensor xp(A, T);
    NoiseMatrix kp(A, T);
    for (int a = 0; a < A; ++a) {
      for (int t = 0; t < T; ++t) {
        xp.set_valid(a, t, x.valid(perm[a], t));
        for (int c = 0; c < kStateDim; ++c) xp.at(a, t, c) = x.at(perm[a], t, c);
        kp(a, t) = k(perm[a], t);
      }
    }
    const SceneTensor e = model.predict(x, k, map);
    const SceneTensor ep = model.predict(xp, kp, map);
    double diff = 0.0;
    for (int a = 0; a < A; ++a) {
      for (int t = 0; t < T; ++t) {
        if (!x.valid(perm[a], t)) continue;
        for (int c = 0; c < kStateDim; ++c) diff = std::max(diff, std::abs(ep.at(a, t, c) - e.at(perm[a], t, c)));
      }
    }
    CHECK(diff <= 1e-9);
  }
}

TEST_CASE("invalid tokens do not leak into valid outputs") {
  SceneDenoiser model(small_config(), ChannelStats::identity());
  Rng rng(3);
  SceneTensor x = testing::random_normalized(rng, 3, 4, 0.6);
  x.set_valid(1, 2, false);
  const NoiseMatrix k(3, 4, 0.7);
  const SceneTensor base = model.predict(x, k, {});
  SceneTensor poked = x;
  for (double& v : poked.token(1, 2)) v = 1e3;
  NoiseMatrix k2 = k;
  k2(1, 2) = 0.0;
  const SceneTensor out = model.predict(poked, k2, {});
  CHECK(testing::max_abs_diff(base, out) == 0.0);
  for (int c = 0; c < kStateDim; ++c) CHECK(out.at(1, 2, c) == 0.0);
}

TEST_CASE("non-finite inputs name the failing block") {
  SceneDenoiser model(small_config(), ChannelStats::identity());
  SceneTensor x(1, 2);
  x.set_valid(0, 0, true);
  x.set_valid(0, 1, true);
  x.at(0, 1, kX) = std::numeric_limits<double>::infinity();
  try {
    model.predict(x, NoiseMatrix(1, 2, 0.5), {});
    FAIL("expected an exception");
  } catch (const NonFiniteActivations& e) {
    CHECK(std::string(e.what()).find("non-finite activations after") != std::string::npos);
  }
}

TEST_CASE("predictions are identical across processes") {
  const std::string a = run_probe();
  const std::string b = run_probe();
  CHECK(!a.empty());
  CHECK(a == b);
}

TEST_CASE("checkpoint round trip is bit-identical") {
  ChannelStats stats;
  const auto examples = straight_examples(3, stats);
  SceneDenoiser model(small_config(true), stats);
  TrainConfig tc;
  tc.total_steps = 3;
  tc.batch_size = 2;
  tc.warmup_steps = 1;
  train(model, examples, {}, tc);

  const std::string path = temp_path("roundtrip.ckpt");
  save_checkpoint(path, model, tc);
  const LoadedCheckpoint loaded = load_checkpoint(path);
  CHECK(loaded.model->config() == model.config());
  CHECK(loaded.train_config.total_steps == 3);
  REQUIRE(loaded.model->parameters().size() == model.parameters().size());
  for (size_t i = 0; i < model.parameters().size(); ++i) {
    CHECK(loaded.model->parameters()[i].name == model.parameters()[i].name);
    CHECK(loaded.model->parameters()[i].value == model.parameters()[i].value);
  }
  for (int c = 0; c < kStateDim; ++c) {
    CHECK(loaded.model->stats().mean[c] == stats.mean[c]);
    CHECK(loaded.model->stats().std[c] == stats.std[c]);
  }
  const SceneTensor& x = examples[0].scene;
  const NoiseMatrix k(x.agents(), x.frames(), 0.6);
  CHECK(loaded.model->predict(x, k, loaded.model->encode_map(examples[0].map)) ==
        model.predict(x, k, model.encode_map(examples[0].map)));

  const std::string bytes = read_bytes(path);
  std::string bumped = bytes;
  bumped[8] = 99;
  write_bytes(path, bumped);
  CHECK_THROWS_AS(load_checkpoint(path), CheckpointError);
  write_bytes(path, bytes.substr(0, bytes.size() - 10));
  CHECK_THROWS_AS(load_checkpoint(path), CheckpointError);
  write_bytes(path, "not a checkpoint");
  CHECK_THROWS_AS(load_checkpoint(path), CheckpointError);
  std::filesystem::remove(path);
  CHECK_THROWS_AS(load_checkpoint(path), CheckpointError);
}

TEST_CASE("zero-initialized model starts at unit loss and zero steps change nothing") {
  ChannelStats stats;
  const auto examples = straight_examples(8, stats);
  ModelConfig cfg = small_config(true);
  SceneDenoiser model(cfg, stats);
  const double loss = evaluation_loss(model, examples, NoisePolicy{}, 4);
  CHECK(loss == doctest::Approx(1.0).epsilon(0.25));

  std::vector<nn::Matrix> before;
  for (const auto& p : model.parameters()) before.push_back(p.value);
  TrainConfig tc;
  tc.total_steps = 0;
  CHECK(train(model, examples, {}, tc).empty());
  for (size_t i = 0; i < before.size(); ++i) CHECK(model.parameters()[i].value == before[i]);
}

TEST_CASE("learning rate warmup and cosine decay") {
  TrainConfig tc;
  tc.learning_rate = 1e-3;
  tc.warmup_steps = 10;
  tc.total_steps = 110;
  CHECK(learning_rate_at(tc, 0) == doctest::Approx(1e-4));
  CHECK(learning_rate_at(tc, 9) == doctest::Approx(1e-3));
  CHECK(learning_rate_at(tc, 10) == doctest::Approx(1e-3));
  CHECK(learning_rate_at(tc, 60) == doctest::Approx(5e-4));
  CHECK(learning_rate_at(tc, 110) == doctest::Approx(0.0));
  TrainConfig bad = tc;
  bad.learning_rate = 0.0;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
}

TEST_CASE("noise policy patterns") {
  ChannelStats stats;
  const auto examples = straight_examples(1, stats);
  const TrainExample& ex = examples[0];
  const int M = 32;
  std::mt19937_64 rng(5);

  NoisePolicy independent{1.0, 0.0, 0.0, 0.0};
  for (int i = 0; i < 20; ++i) {
    const NoiseMatrix k = sample_noise_matrix(ex, independent, M, rng);
    for (int a = 0; a < k.agents(); ++a) {
      for (int t = 0; t < k.frames(); ++t) {
        CHECK(k(a, t) >= 1.0 / M);
        CHECK(k(a, t) <= 1.0);
      }
    }
  }

  NoisePolicy history{0.0, 1.0, 0.0, 0.0};
  for (int i = 0; i < 20; ++i) {
    const NoiseMatrix k = sample_noise_matrix(ex, history, M, rng);
    const double shared = k(0, ex.conditioned_frames);
    CHECK(shared >= 1.0 / M);
    for (int a = 0; a < k.agents(); ++a) {
      for (int t = 0; t < k.frames(); ++t) {
        CHECK(k(a, t) == (t < ex.conditioned_frames ? 0.0 : shared));
      }
    }
  }

  NoisePolicy goals{0.0, 0.0, 1.0, 1.0};
  const NoiseMatrix k = sample_noise_matrix(ex, goals, M, rng);
  for (int a = 0; a < k.agents(); ++a) CHECK(k(a, k.frames() - 1) == 0.0);

  TrainExample gappy = ex;
  gappy.scene.set_valid(0, 7, false);
  const NoiseMatrix kg = sample_noise_matrix(gappy, independent, M, rng);
  CHECK(kg(0, 7) == 0.0);
}

TEST_CASE("overfits a single scenario") {
  ChannelStats stats;
  const auto examples = straight_examples(1, stats);
  ModelConfig cfg = small_config(true);
  cfg.hidden = 32;
  SceneDenoiser model(cfg, stats);
  TrainConfig tc;
  tc.total_steps = 600;
  tc.batch_size = 4;
  tc.warmup_steps = 20;
  tc.learning_rate = 3e-3;
  tc.policy = NoisePolicy{0.0, 1.0, 0.0, 0.0};
  const auto start = std::chrono::steady_clock::now();
  const auto logs = train(model, examples, examples, tc);
  MESSAGE("overfit run: " << std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count()
                          << " s, final validation " << *logs.back().validation_loss);
  REQUIRE(logs.size() == 600);
  CHECK(*logs.back().validation_loss < 0.05);
}

TEST_CASE("a huge learning rate raises DivergenceError") {
  ChannelStats stats;
  const auto examples = straight_examples(2, stats);
  SceneDenoiser model(small_config(false), stats);
  TrainConfig tc;
  tc.learning_rate = 1e6;
  tc.warmup_steps = 0;
  tc.total_steps = 400;
  tc.batch_size = 1;
  tc.weight_decay = 0.0;
  CHECK_THROWS_AS(train(model, examples, {}, tc), DivergenceError);
}
