#pragma once

#include <memory>
#include <stdexcept>
#include <string>

#include "scenegen/model.hpp"
#include "scenegen/train.hpp"

namespace scenegen {

inline constexpr int kCheckpointVersion = 1;

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Layout: 8-byte magic "SCNGCKPT", u32 format version, u64 header length, JSON header
// (configs, channel stats, tensor table), then little-endian float32 tensors.
void save_checkpoint(const std::string& path, const SceneDenoiser& model,
                     const TrainConfig& train_config);

struct LoadedCheckpoint {
  std::unique_ptr<SceneDenoiser> model;
  TrainConfig train_config;
};

LoadedCheckpoint load_checkpoint(const std::string& path);

}  // namespace scenegen
