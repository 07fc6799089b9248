#include "scenegen/scene.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace scenegen {

size_t TokenMask::count() const {
  return static_cast<size_t>(std::count(bits_.begin(), bits_.end(), std::uint8_t{1}));
}

std::string to_string(LaneType type) {
  switch (type) {
    case LaneType::kDriving:
      return "driving";
    case LaneType::kIntersection:
      return "intersection";
    case LaneType::kMerge:
      return "merge";
  }
  return "driving";
}

LaneType lane_type_from_string(const std::string& name) {
  if (name == "driving") return LaneType::kDriving;
  if (name == "intersection") return LaneType::kIntersection;
  if (name == "merge") return LaneType::kMerge;
  throw std::invalid_argument("unknown lane type '" + name + "'");
}

size_t MapSet::valid_point_count() const {
  size_t n = 0;
  for (const auto& lane : lanes) {
    for (size_t i = 0; i < lane.points.size(); ++i) n += lane.point_is_valid(i) ? 1 : 0;
  }
  return n;
}

namespace {

void check_stats(const ChannelStats& stats) {
  for (int c = 0; c < kStateDim; ++c) {
    if (!(stats.std[c] > 0.0) || !std::isfinite(stats.std[c]) || !std::isfinite(stats.mean[c])) {
      throw std::invalid_argument("channel stats: std must be positive and finite (channel " +
                                  std::to_string(c) + ")");
    }
  }
}

void check_finite(const SceneTensor& scene, const char* what) {
  for (int a = 0; a < scene.agents(); ++a) {
    for (int t = 0; t < scene.frames(); ++t) {
      if (!scene.valid(a, t)) continue;
      for (int c = 0; c < kStateDim; ++c) {
        if (!std::isfinite(scene.at(a, t, c))) {
          std::ostringstream os;
          os << what << ": non-finite value at agent " << a << ", frame " << t << ", channel "
             << c;
          throw NonFiniteError(os.str());
        }
      }
    }
  }
}

}  // namespace

TokenState normalize_token(const TokenState& metric, const ChannelStats& stats) {
  TokenState out{};
  for (int c = 0; c < kStateDim; ++c) out[c] = (metric[c] - stats.mean[c]) / stats.std[c];
  return out;
}

TokenState denormalize_token(const TokenState& normalized, const ChannelStats& stats) {
  TokenState out{};
  for (int c = 0; c < kStateDim; ++c) out[c] = normalized[c] * stats.std[c] + stats.mean[c];
  const double norm = std::hypot(out[kSinHeading], out[kCosHeading]);
  if (norm > 1e-6) {
    out[kSinHeading] /= norm;
    out[kCosHeading] /= norm;
  } else {
    out[kSinHeading] = 0.0;
    out[kCosHeading] = 1.0;
  }
  return out;
}

SceneTensor normalize(const SceneTensor& scene, const ChannelStats& stats) {
  check_stats(stats);
  check_finite(scene, "normalize");
  SceneTensor out(scene.agents(), scene.frames());
  out.valid_mask() = scene.valid_mask();
  for (int a = 0; a < scene.agents(); ++a) {
    for (int t = 0; t < scene.frames(); ++t) {
      if (!scene.valid(a, t)) continue;
      for (int c = 0; c < kStateDim; ++c) {
        out.at(a, t, c) = (scene.at(a, t, c) - stats.mean[c]) / stats.std[c];
      }
    }
  }
  return out;
}

SceneTensor denormalize(const SceneTensor& scene, const ChannelStats& stats) {
  check_stats(stats);
  check_finite(scene, "denormalize");
  SceneTensor out(scene.agents(), scene.frames());
  out.valid_mask() = scene.valid_mask();
  for (int a = 0; a < scene.agents(); ++a) {
    for (int t = 0; t < scene.frames(); ++t) {
      if (!scene.valid(a, t)) continue;
      TokenState tok;
      std::copy(scene.token(a, t).begin(), scene.token(a, t).end(), tok.begin());
      const TokenState metric = denormalize_token(tok, stats);
      std::copy(metric.begin(), metric.end(), out.token(a, t).begin());
    }
  }
  return out;
}

ChannelStats fit_stats(std::span<const SceneTensor> scenes) {
  std::array<double, kStateDim> sum{};
  size_t count = 0;
  for (const auto& scene : scenes) {
    check_finite(scene, "fit_stats");
    for (int a = 0; a < scene.agents(); ++a) {
      for (int t = 0; t < scene.frames(); ++t) {
        if (!scene.valid(a, t)) continue;
        for (int c = 0; c < kStateDim; ++c) sum[c] += scene.at(a, t, c);
        ++count;
      }
    }
  }
  if (count == 0) throw std::invalid_argument("fit_stats: corpus has no valid tokens");

  ChannelStats stats;
  for (int c = 0; c < kStateDim; ++c) stats.mean[c] = sum[c] / static_cast<double>(count);

  std::array<double, kStateDim> sq{};
  for (const auto& scene : scenes) {
    for (int a = 0; a < scene.agents(); ++a) {
      for (int t = 0; t < scene.frames(); ++t) {
        if (!scene.valid(a, t)) continue;
        for (int c = 0; c < kStateDim; ++c) {
          const double d = scene.at(a, t, c) - stats.mean[c];
          sq[c] += d * d;
        }
      }
    }
  }
  for (int c = 0; c < kStateDim; ++c) {
    stats.std[c] = std::max(kStdFloor, std::sqrt(sq[c] / static_cast<double>(count)));
  }
  return stats;
}

double heading_of(const SceneTensor& scene, int a, int t) {
  return std::atan2(scene.at(a, t, kSinHeading), scene.at(a, t, kCosHeading));
}

}  // namespace scenegen
