#include "scenegen/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <vector>

#include <json.hpp>

namespace scenegen {

namespace {

constexpr char kMagic[8] = {'S', 'C', 'N', 'G', 'C', 'K', 'P', 'T'};

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes little endian");

nlohmann::json model_to_json(const ModelConfig& c) {
  return {{"hidden", c.hidden},         {"block_pairs", c.block_pairs}, {"heads", c.heads},
          {"map_queries", c.map_queries}, {"ff_mult", c.ff_mult},       {"grid_size", c.grid_size},
          {"rope_base", c.rope_base},   {"zero_init", c.zero_init},     {"seed", c.seed},
          {"dt_s", c.dt_s}};
}

ModelConfig model_from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.hidden = j.at("hidden");
  c.block_pairs = j.at("block_pairs");
  c.heads = j.at("heads");
  c.map_queries = j.at("map_queries");
  c.ff_mult = j.at("ff_mult");
  c.grid_size = j.at("grid_size");
  c.rope_base = j.at("rope_base");
  c.zero_init = j.at("zero_init");
  c.seed = j.at("seed");
  c.dt_s = j.at("dt_s");
  return c;
}

nlohmann::json train_to_json(const TrainConfig& c) {
  return {{"learning_rate", c.learning_rate},
          {"warmup_steps", c.warmup_steps},
          {"total_steps", c.total_steps},
          {"batch_size", c.batch_size},
          {"weight_decay", c.weight_decay},
          {"optimizer", {{"kind", "adamw"}, {"beta1", c.beta1}, {"beta2", c.beta2}, {"eps", c.adam_eps}}},
          {"grad_clip", c.grad_clip},
          {"validation_every", c.validation_every},
          {"seed", c.seed},
          {"noise_policy",
           {{"independent", c.policy.independent},
            {"history_clean", c.policy.history_clean},
            {"history_goals", c.policy.history_goals},
            {"goal_probability", c.policy.goal_probability}}}};
}

TrainConfig train_from_json(const nlohmann::json& j) {
  TrainConfig c;
  c.learning_rate = j.at("learning_rate");
  c.warmup_steps = j.at("warmup_steps");
  c.total_steps = j.at("total_steps");
  c.batch_size = j.at("batch_size");
  c.weight_decay = j.at("weight_decay");
  c.beta1 = j.at("optimizer").at("beta1");
  c.beta2 = j.at("optimizer").at("beta2");
  c.adam_eps = j.at("optimizer").at("eps");
  c.grad_clip = j.at("grad_clip");
  c.validation_every = j.at("validation_every");
  c.seed = j.at("seed");
  const auto& p = j.at("noise_policy");
  c.policy.independent = p.at("independent");
  c.policy.history_clean = p.at("history_clean");
  c.policy.history_goals = p.at("history_goals");
  c.policy.goal_probability = p.at("goal_probability");
  return c;
}

}  // namespace

void save_checkpoint(const std::string& path, const SceneDenoiser& model,
                     const TrainConfig& train_config) {
  nlohmann::json header;
  header["format_version"] = kCheckpointVersion;
  header["model"] = model_to_json(model.config());
  header["train"] = train_to_json(train_config);
  header["stats"] = {{"mean", model.stats().mean}, {"std", model.stats().std}};
  nlohmann::json tensors = nlohmann::json::array();
  size_t offset = 0;
  for (const auto& p : model.parameters()) {
    tensors.push_back({{"name", p.name}, {"shape", {p.value.rows(), p.value.cols()}}, {"offset", offset}});
    offset += static_cast<size_t>(p.value.size());
  }
  header["tensors"] = tensors;
  const std::string text = header.dump();

  std::vector<float> payload;
  payload.reserve(offset);
  for (const auto& p : model.parameters()) {
    for (Eigen::Index i = 0; i < p.value.size(); ++i) payload.push_back(static_cast<float>(p.value.data()[i]));
  }

  std::ofstream out(path, std::ios::binary);
  if (!out) throw CheckpointError("cannot open " + path + " for writing");
  const std::uint32_t version = kCheckpointVersion;
  const std::uint64_t length = text.size();
  out.write(kMagic, sizeof(kMagic));
  out.write(reinterpret_cast<const char*>(&version), sizeof(version));
  out.write(reinterpret_cast<const char*>(&length), sizeof(length));
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  out.write(reinterpret_cast<const char*>(payload.data()),
            static_cast<std::streamsize>(payload.size() * sizeof(float)));
  if (!out) throw CheckpointError("failed writing " + path);
}

LoadedCheckpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint " + path);
  char magic[8];
  std::uint32_t version = 0;
  std::uint64_t length = 0;
  in.read(magic, sizeof(magic));
  in.read(reinterpret_cast<char*>(&version), sizeof(version));
  in.read(reinterpret_cast<char*>(&length), sizeof(length));
  if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw CheckpointError(path + ": not a checkpoint file");
  }
  if (version != kCheckpointVersion) {
    throw CheckpointError(path + ": checkpoint version " + std::to_string(version) +
                          " unsupported (expected " + std::to_string(kCheckpointVersion) + ")");
  }
  std::string text(length, '\0');
  in.read(text.data(), static_cast<std::streamsize>(length));
  if (!in) throw CheckpointError(path + ": truncated header");

  LoadedCheckpoint out;
  try {
    const auto header = nlohmann::json::parse(text);
    if (header.at("format_version").get<int>() != kCheckpointVersion) {
      throw CheckpointError(path + ": header version mismatch");
    }
    ChannelStats stats;
    stats.mean = header.at("stats").at("mean").get<std::array<double, kStateDim>>();
    stats.std = header.at("stats").at("std").get<std::array<double, kStateDim>>();
    out.train_config = train_from_json(header.at("train"));
    out.model = std::make_unique<SceneDenoiser>(model_from_json(header.at("model")), stats);
    auto& params = out.model->parameters();
    const auto& tensors = header.at("tensors");
    if (tensors.size() != params.size()) throw CheckpointError(path + ": tensor count mismatch");
    size_t total = 0;
    for (size_t i = 0; i < params.size(); ++i) {
      const auto& t = tensors[i];
      if (t.at("name").get<std::string>() != params[i].name ||
          t.at("shape")[0].get<Eigen::Index>() != params[i].value.rows() ||
          t.at("shape")[1].get<Eigen::Index>() != params[i].value.cols() ||
          t.at("offset").get<size_t>() != total) {
        throw CheckpointError(path + ": tensor " + t.at("name").get<std::string>() +
                              " does not match the model layout");
      }
      total += static_cast<size_t>(params[i].value.size());
    }
    std::vector<float> payload(total);
    in.read(reinterpret_cast<char*>(payload.data()), static_cast<std::streamsize>(total * sizeof(float)));
    if (!in) throw CheckpointError(path + ": truncated tensor data");
    size_t at = 0;
    for (auto& p : params) {
      for (Eigen::Index i = 0; i < p.value.size(); ++i) p.value.data()[i] = payload[at++];
      p.zero_grad();
    }
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(path + ": malformed header: " + e.what());
  } catch (const std::invalid_argument& e) {
    throw CheckpointError(path + ": " + e.what());
  }
  return out;
}

}  // namespace scenegen
