// Prints a trained miniature model's prediction in hexfloat; run twice to compare processes.
#include <cstdio>
#include <vector>

#include "scenegen/model.hpp"
#include "scenegen/train.hpp"
#include "support.hpp"

int main() {
  using namespace scenegen;
  testing::Rng rng(5);
  std::vector<ScenarioRecord> records{testing::straight_record(3), testing::straight_record(2, 3)};
  const ChannelStats stats = fit_stats(records);
  const auto examples = prepare_examples(records, stats);
  ModelConfig cfg;
  cfg.hidden = 16;
  cfg.block_pairs = 1;
  cfg.heads = 2;
  cfg.map_queries = 4;
  cfg.seed = 3;
  SceneDenoiser model(cfg, stats);
  TrainConfig tc;
  tc.total_steps = 5;
  tc.batch_size = 2;
  tc.warmup_steps = 1;
  tc.seed = 9;
  train(model, examples, {}, tc);
  const SceneTensor x = testing::random_normalized(rng, 3, 6, 1.0);
  const NoiseMatrix k(3, 6, 0.5);
  const SceneTensor eps = model.predict(x, k, model.encode_map(examples[0].map));
  for (double v : eps.data()) std::printf("%a\n", v);
  return 0;
}
