#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace scenegen {

using Vec2 = Eigen::Vector2d;

// Denoised channels of one agent token.
inline constexpr int kStateDim = 8;
enum Channel : int {
  kX = 0,
  kY = 1,
  kSinHeading = 2,
  kCosHeading = 3,
  kVx = 4,
  kVy = 5,
  kLength = 6,
  kWidth = 7,
};

using TokenState = std::array<double, kStateDim>;

// Boolean A x T mask (validity, keep, conditioning).
class TokenMask {
 public:
  TokenMask() = default;
  TokenMask(int agents, int frames, bool value = false)
      : agents_(agents), frames_(frames),
        bits_(static_cast<size_t>(agents) * frames, value ? 1 : 0) {}

  int agents() const { return agents_; }
  int frames() const { return frames_; }
  bool operator()(int a, int t) const { return bits_[index(a, t)] != 0; }
  void set(int a, int t, bool v) { bits_[index(a, t)] = v ? 1 : 0; }
  size_t count() const;
  bool operator==(const TokenMask&) const = default;

 private:
  size_t index(int a, int t) const { return static_cast<size_t>(a) * frames_ + t; }
  int agents_ = 0;
  int frames_ = 0;
  std::vector<std::uint8_t> bits_;
};

// Agent states over time plus a validity mask. Row-major A x T x D storage.
class SceneTensor {
 public:
  SceneTensor() = default;
  SceneTensor(int agents, int frames)
      : agents_(agents), frames_(frames),
        states_(static_cast<size_t>(agents) * frames * kStateDim, 0.0),
        valid_(agents, frames) {}

  int agents() const { return agents_; }
  int frames() const { return frames_; }

  double& at(int a, int t, int c) { return states_[offset(a, t) + c]; }
  double at(int a, int t, int c) const { return states_[offset(a, t) + c]; }

  std::span<double, kStateDim> token(int a, int t) {
    return std::span<double, kStateDim>(states_.data() + offset(a, t), kStateDim);
  }
  std::span<const double, kStateDim> token(int a, int t) const {
    return std::span<const double, kStateDim>(states_.data() + offset(a, t), kStateDim);
  }
  Vec2 position(int a, int t) const { return {at(a, t, kX), at(a, t, kY)}; }
  void set_position(int a, int t, const Vec2& p) {
    at(a, t, kX) = p.x();
    at(a, t, kY) = p.y();
  }

  bool valid(int a, int t) const { return valid_(a, t); }
  void set_valid(int a, int t, bool v) { valid_.set(a, t, v); }
  const TokenMask& valid_mask() const { return valid_; }
  TokenMask& valid_mask() { return valid_; }

  std::span<double> data() { return states_; }
  std::span<const double> data() const { return states_; }

  bool operator==(const SceneTensor&) const = default;

 private:
  size_t offset(int a, int t) const {
    return (static_cast<size_t>(a) * frames_ + t) * kStateDim;
  }
  int agents_ = 0;
  int frames_ = 0;
  std::vector<double> states_;
  TokenMask valid_;
};

enum class LaneType : int { kDriving = 0, kIntersection = 1, kMerge = 2 };
inline constexpr int kLaneTypeCount = 3;

std::string to_string(LaneType type);
LaneType lane_type_from_string(const std::string& name);

struct Lane {
  LaneType type = LaneType::kDriving;
  std::vector<Vec2> points;
  // Empty means every point is valid.
  std::vector<std::uint8_t> point_valid;

  bool point_is_valid(size_t i) const { return point_valid.empty() || point_valid[i] != 0; }
};

struct MapSet {
  std::vector<Lane> lanes;

  size_t valid_point_count() const;
  bool empty() const { return valid_point_count() == 0; }
};

struct ChannelStats {
  std::array<double, kStateDim> mean{};
  std::array<double, kStateDim> std{1, 1, 1, 1, 1, 1, 1, 1};

  static ChannelStats identity() { return {}; }
};

inline constexpr double kStdFloor = 1e-6;

class NonFiniteError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// (value - mean) / std per channel on valid tokens; invalid tokens become zero.
SceneTensor normalize(const SceneTensor& scene, const ChannelStats& stats);

// Inverse affine map on valid tokens with the heading pair re-projected to the
// unit circle; a heading pair with norm <= 1e-6 decodes to (sin, cos) = (0, 1).
SceneTensor denormalize(const SceneTensor& scene, const ChannelStats& stats);

// Per-channel population mean/std over valid tokens, std floored at kStdFloor.
ChannelStats fit_stats(std::span<const SceneTensor> scenes);

TokenState normalize_token(const TokenState& metric, const ChannelStats& stats);
TokenState denormalize_token(const TokenState& normalized, const ChannelStats& stats);

// Heading in radians from the (sin, cos) channels.
double heading_of(const SceneTensor& scene, int a, int t);

}  // namespace scenegen
