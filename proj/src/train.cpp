#include "scenegen/train.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <sstream>

namespace scenegen {

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0)) throw std::invalid_argument("train config: learning rate must be > 0");
  if (warmup_steps < 0 || total_steps < 0 || batch_size <= 0 || validation_every <= 0) {
    throw std::invalid_argument("train config: step and batch counts must be positive");
  }
  if (weight_decay < 0.0 || grad_clip <= 0.0) {
    throw std::invalid_argument("train config: weight decay and clip must be non-negative");
  }
  const NoisePolicy& p = policy;
  if (p.independent < 0 || p.history_clean < 0 || p.history_goals < 0 ||
      p.independent + p.history_clean + p.history_goals <= 0) {
    throw std::invalid_argument("train config: noise policy weights must be non-negative");
  }
}

std::vector<TrainExample> prepare_examples(std::span<const ScenarioRecord> records,
                                           const ChannelStats& stats) {
  std::vector<TrainExample> out;
  out.reserve(records.size());
  for (const ScenarioRecord& r : records) {
    out.push_back({normalize(to_tensor(r), stats), to_map(r), r.meta.conditioned_frames()});
  }
  return out;
}

NoiseMatrix sample_noise_matrix(const TrainExample& example, const NoisePolicy& policy,
                                int grid_size, std::mt19937_64& rng) {
  const SceneTensor& s = example.scene;
  const double floor = 1.0 / grid_size;
  std::uniform_real_distribution<double> uniform(floor, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const double total = policy.independent + policy.history_clean + policy.history_goals;
  const double pick = unit(rng) * total;
  const bool clean_history = pick >= policy.independent;
  const bool goals = pick >= policy.independent + policy.history_clean;

  // The structured patterns put every generated token at one shared level, as
  // full-sequence sampling does; the independent pattern covers pipelined schedules.
  const double shared = uniform(rng);
  NoiseMatrix k(s.agents(), s.frames());
  for (int a = 0; a < s.agents(); ++a) {
    int last_valid = -1;
    for (int t = 0; t < s.frames(); ++t) {
      const double level = uniform(rng);
      if (!s.valid(a, t)) continue;
      if (!clean_history) {
        k(a, t) = level;
      } else {
        k(a, t) = t < example.conditioned_frames ? 0.0 : shared;
      }
      last_valid = t;
    }
    const bool goal = unit(rng) < policy.goal_probability;
    if (goals && goal && last_valid >= example.conditioned_frames) k(a, last_valid) = 0.0;
  }
  return k;
}

double learning_rate_at(const TrainConfig& config, int step) {
  if (step < config.warmup_steps) {
    return config.learning_rate * (step + 1) / static_cast<double>(config.warmup_steps);
  }
  const int span = std::max(1, config.total_steps - config.warmup_steps);
  const double progress = std::min(1.0, (step - config.warmup_steps) / static_cast<double>(span));
  return config.learning_rate * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

namespace {

struct BatchLoss {
  nn::Var loss;
  double value = 0.0;
};

// Builds the loss of `examples` under `ks` on `tape`; noised scenes are kept alive in
// `noised` because the forward pass refers to them.
BatchLoss batch_loss(const SceneDenoiser& model, nn::Tape& tape,
                     std::span<const TrainExample* const> examples,
                     std::span<const NoiseMatrix> ks, std::vector<NoisedScene>& noised,
                     std::mt19937_64& rng) {
  noised.clear();
  noised.reserve(examples.size());
  std::vector<ForwardItem> items;
  for (size_t i = 0; i < examples.size(); ++i) {
    noised.push_back(add_noise(examples[i]->scene, ks[i], rng));
    items.push_back({&noised.back().noisy, &ks[i], model.encode_map(tape, examples[i]->map)});
  }
  std::vector<RowRef> rows;
  const nn::Var pred = model.forward(tape, items, rows);
  nn::Matrix target(static_cast<Eigen::Index>(rows.size()), kStateDim);
  Eigen::VectorXd weights(static_cast<Eigen::Index>(rows.size()));
  for (size_t r = 0; r < rows.size(); ++r) {
    const RowRef& ref = rows[r];
    for (int c = 0; c < kStateDim; ++c) {
      target(static_cast<Eigen::Index>(r), c) = noised[ref.item].eps.at(ref.agent, ref.frame, c);
    }
    weights(static_cast<Eigen::Index>(r)) = ks[ref.item](ref.agent, ref.frame) > 0.0 ? 1.0 : 0.0;
  }
  const nn::Var loss = nn::weighted_mse(tape, pred, target, weights);
  return {loss, tape.value(loss)(0, 0)};
}

}  // namespace

double evaluation_loss(const SceneDenoiser& model, std::span<const TrainExample> examples,
                       const NoisePolicy& policy, std::uint64_t seed) {
  if (examples.empty()) return 0.0;
  std::mt19937_64 rng(seed);
  double sum = 0.0;
  for (const TrainExample& ex : examples) {
    nn::Tape tape(false);
    const NoiseMatrix k = sample_noise_matrix(ex, policy, model.config().grid_size, rng);
    const TrainExample* ptr = &ex;
    std::vector<NoisedScene> noised;
    sum += batch_loss(model, tape, std::span<const TrainExample* const>(&ptr, 1),
                      std::span<const NoiseMatrix>(&k, 1), noised, rng)
               .value;
  }
  return sum / static_cast<double>(examples.size());
}

std::vector<TrainLog> train(SceneDenoiser& model, std::span<const TrainExample> train_set,
                            std::span<const TrainExample> validation_set,
                            const TrainConfig& config,
                            const std::function<void(const TrainLog&)>& on_log) {
  config.validate();
  if (train_set.empty() && config.total_steps > 0) {
    throw std::invalid_argument("train: empty training set");
  }
  std::vector<nn::Parameter>& params = model.parameters();
  std::vector<nn::Matrix> m1, m2;
  for (const auto& p : params) {
    m1.push_back(nn::Matrix::Zero(p.value.rows(), p.value.cols()));
    m2.push_back(nn::Matrix::Zero(p.value.rows(), p.value.cols()));
  }
  std::mt19937_64 rng(config.seed);
  std::uniform_int_distribution<size_t> pick(0, train_set.empty() ? 0 : train_set.size() - 1);
  std::vector<TrainLog> logs;
  int diverged_run = 0;

  for (int step = 0; step < config.total_steps; ++step) {
    for (auto& p : params) p.zero_grad();
    std::vector<const TrainExample*> batch;
    std::vector<NoiseMatrix> ks;
    for (int b = 0; b < config.batch_size; ++b) {
      batch.push_back(&train_set[pick(rng)]);
      ks.push_back(sample_noise_matrix(*batch.back(), config.policy, model.config().grid_size, rng));
    }
    nn::Tape tape(true);
    std::vector<NoisedScene> noised;
    double loss_value = std::numeric_limits<double>::quiet_NaN();
    bool forward_ok = true;
    try {
      const BatchLoss loss = batch_loss(model, tape, batch, ks, noised, rng);
      tape.backward(loss.loss);
      loss_value = loss.value;
    } catch (const NonFiniteActivations&) {
      forward_ok = false;
      for (auto& p : params) p.zero_grad();
    }

    if (!std::isfinite(loss_value) || loss_value > 1e3) {
      if (++diverged_run >= 100) {
        std::ostringstream msg;
        msg << "training diverged: loss " << loss_value << " above 1e3 for 100 steps ending at step "
            << step << " (lr " << learning_rate_at(config, step) << ")";
        throw DivergenceError(msg.str());
      }
    } else {
      diverged_run = 0;
    }

    double norm2 = 0.0;
    for (const auto& p : params) norm2 += p.grad.squaredNorm();
    const double norm = std::sqrt(norm2);
    const double clip = std::isfinite(norm) && norm > config.grad_clip ? config.grad_clip / norm : 1.0;
    const double lr = learning_rate_at(config, step);
    const double bc1 = 1.0 - std::pow(config.beta1, step + 1);
    const double bc2 = 1.0 - std::pow(config.beta2, step + 1);
    if (forward_ok && std::isfinite(norm)) {
      for (size_t i = 0; i < params.size(); ++i) {
        nn::Parameter& p = params[i];
        const nn::Matrix g = p.grad * clip;
        m1[i] = config.beta1 * m1[i] + (1.0 - config.beta1) * g;
        m2[i] = config.beta2 * m2[i] + (1.0 - config.beta2) * g.cwiseProduct(g);
        const bool decay = p.name.size() > 2 && p.name.ends_with(".w");
        if (decay) p.value *= 1.0 - lr * config.weight_decay;
        p.value.array() -= lr * (m1[i].array() / bc1) /
                           ((m2[i].array() / bc2).sqrt() + config.adam_eps);
        p.value = p.value.cast<float>().cast<double>();
      }
    }

    TrainLog log{step + 1, loss_value, lr, std::nullopt};
    const bool last = step + 1 == config.total_steps;
    if (!validation_set.empty() && ((step + 1) % config.validation_every == 0 || last)) {
      try {
        log.validation_loss = evaluation_loss(model, validation_set, config.policy, config.seed + 1);
      } catch (const NonFiniteActivations&) {
        log.validation_loss = std::numeric_limits<double>::quiet_NaN();
      }
    }
    logs.push_back(log);
    if (on_log) on_log(log);
  }
  for (auto& p : params) p.zero_grad();
  return logs;
}

}  // namespace scenegen
