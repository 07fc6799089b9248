#include "scenegen/model.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <stdexcept>

namespace scenegen {

using nn::Matrix;
using nn::Tape;
using nn::Var;

void ModelConfig::validate() const {
  if (hidden <= 0 || block_pairs <= 0 || heads <= 0 || map_queries <= 0 || ff_mult <= 0 ||
      grid_size <= 0) {
    throw std::invalid_argument("model config: sizes must be positive");
  }
  if (hidden % heads != 0) throw std::invalid_argument("model config: hidden % heads != 0");
  if ((hidden / heads) % 4 != 0) {
    throw std::invalid_argument("model config: head width must be a multiple of 4");
  }
  if (!(rope_base > 1.0)) throw std::invalid_argument("model config: rope_base must exceed 1");
  if (!(dt_s > 0.0)) throw std::invalid_argument("model config: dt_s must be positive");
}

Matrix noise_level_features(std::span<const double> levels, int dim) {
  const int half = dim / 2;
  Matrix out(static_cast<Eigen::Index>(levels.size()), dim);
  for (size_t r = 0; r < levels.size(); ++r) {
    const double t = levels[r] * 1000.0;
    for (int i = 0; i < half; ++i) {
      const double freq = std::exp(-std::log(10000.0) * i / half);
      out(r, i) = std::sin(t * freq);
      out(r, half + i) = std::cos(t * freq);
    }
  }
  return out;
}

namespace {

constexpr int kNoiseFeatures = 64;

void check_finite(const Tape& tape, Var v, const std::string& where) {
  if (!tape.value(v).allFinite()) {
    throw NonFiniteActivations("non-finite activations after " + where);
  }
}

}  // namespace

SceneDenoiser::SceneDenoiser(const ModelConfig& config, const ChannelStats& stats)
    : config_(config), stats_(stats) {
  config_.validate();
  const int H = config_.hidden;
  const int F = H * config_.ff_mult;
  const double zero_scale = config_.zero_init ? 0.0 : 0.1;

  input_ = add_linear("input", kInputFeatures, H);
  noise1_ = add_linear("noise.1", kNoiseFeatures, H);
  noise2_ = add_linear("noise.2", H, H);

  map_point_ = add_linear("map.point", kMapFeatures, H);
  map_latents_ = add_param("map.latents", config_.map_queries, H, 1.0);
  map_q_ = add_linear("map.q", H, H);
  map_k_ = add_linear("map.k", H, H);
  map_v_ = add_linear("map.v", H, H);
  map_o_ = add_linear("map.o", H, H);
  map_ff1_ = add_linear("map.ff1", H, F);
  map_ff2_ = add_linear("map.ff2", F, H);
  map_self_qkv_ = add_linear("map.self.qkv", H, 3 * H);
  map_self_o_ = add_linear("map.self.o", H, H);

  cross_q_ = add_linear("cross.q", H, H);
  cross_kv_ = add_linear("cross.kv", H, 2 * H);
  cross_o_ = add_linear("cross.o", H, H);

  for (int b = 0; b < 2 * config_.block_pairs; ++b) {
    const std::string tag = (b % 2 == 0 ? "temporal." : "spatial.") + std::to_string(b / 2);
    Block blk;
    blk.modulation = add_linear(tag + ".mod", H, 6 * H, zero_scale);
    blk.qkv = add_linear(tag + ".qkv", H, 3 * H);
    blk.out = add_linear(tag + ".out", H, H);
    blk.ff1 = add_linear(tag + ".ff1", H, F);
    blk.ff2 = add_linear(tag + ".ff2", F, H);
    blocks_.push_back(blk);
  }
  final_mod_ = add_linear("final.mod", H, 2 * H, zero_scale);
  head_ = add_linear("head", H, kStateDim, zero_scale);
  // Linear path from the raw inputs straight to the output.
  skip_ = add_linear("skip", kInputFeatures, kStateDim, zero_scale);
}

int SceneDenoiser::add_param(const std::string& name, int rows, int cols, double scale) {
  // Each parameter draws from its own stream so adding one does not shift the others.
  std::seed_seq seq{static_cast<std::uint64_t>(config_.seed),
                    static_cast<std::uint64_t>(params_.size())};
  std::mt19937_64 rng(seq);
  std::normal_distribution<double> normal(0.0, 1.0);
  nn::Parameter p;
  p.name = name;
  p.value.resize(rows, cols);
  for (Eigen::Index i = 0; i < p.value.size(); ++i) {
    p.value.data()[i] = static_cast<float>(scale * normal(rng));
  }
  p.zero_grad();
  params_.push_back(std::move(p));
  return static_cast<int>(params_.size()) - 1;
}

SceneDenoiser::Linear SceneDenoiser::add_linear(const std::string& name, int in, int out,
                                                double gain) {
  Linear l;
  l.w = add_param(name + ".w", in, out, gain * std::sqrt(2.0 / (in + out)));
  l.b = add_param(name + ".b", 1, out, 0.0);
  return l;
}

void SceneDenoiser::prior_features(const SceneTensor& s, const NoiseMatrix& k, int a, int t,
                                   double* out) const {
  int ref = t;
  while (ref >= 0 && !(s.valid(a, ref) && k(a, ref) == 0.0)) --ref;
  if (ref < 0) return;
  const int gap = t - ref;
  double* anchor = out;
  double* implied = out + kStateDim;
  for (int c = 0; c < kStateDim; ++c) anchor[c] = s.at(a, ref, c);
  for (int c : {kX, kY}) {
    const int vc = c == kX ? kVx : kVy;
    const double v = s.at(a, ref, vc) * stats_.std[vc] + stats_.mean[vc];
    anchor[c] += v * config_.dt_s * gap / stats_.std[c];
  }
  const double level = k(a, t);
  if (level > 0.0) {
    const double alpha = NoiseSchedule::alpha(level), sigma = NoiseSchedule::sigma(level);
    for (int c = 0; c < kStateDim; ++c) implied[c] = std::clamp((s.at(a, t, c) - alpha * anchor[c]) / sigma, -10.0, 10.0);
  }
  out[2 * kStateDim] = 1.0;
  out[2 * kStateDim + 1] = gap / 16.0;
}

size_t SceneDenoiser::parameter_count() const {
  size_t n = 0;
  for (const auto& p : params_) n += static_cast<size_t>(p.value.size());
  return n;
}

Var SceneDenoiser::bind(Tape& tape, int index) const {
  // A non-recording tape only copies the value, so inference never writes to the model.
  return tape.param(const_cast<nn::Parameter&>(params_[index]));
}

Var SceneDenoiser::apply(Tape& tape, const Linear& l, Var x) const {
  return nn::linear(tape, x, bind(tape, l.w), bind(tape, l.b));
}

Var SceneDenoiser::self_attention(Tape& tape, const Linear& qkv, const Linear& out, Var x,
                                  std::shared_ptr<const nn::AttentionLayout> layout,
                                  std::shared_ptr<const nn::RotaryTable> rope) const {
  const int H = config_.hidden;
  const Var proj = apply(tape, qkv, x);
  Var q = nn::slice_cols(tape, proj, 0, H);
  Var k = nn::slice_cols(tape, proj, H, H);
  const Var v = nn::slice_cols(tape, proj, 2 * H, H);
  if (rope) {
    const int dh = H / config_.heads;
    q = nn::rotary(tape, q, rope, dh);
    k = nn::rotary(tape, k, rope, dh);
  }
  const Var att = nn::attention(tape, q, k, v, std::move(layout), config_.heads);
  return apply(tape, out, att);
}

Var SceneDenoiser::block(Tape& tape, const Block& b, Var x, Var cond,
                         std::shared_ptr<const nn::AttentionLayout> layout,
                         std::shared_ptr<const nn::RotaryTable> rope,
                         const std::string& tag) const {
  const int H = config_.hidden;
  const Var mod = apply(tape, b.modulation, cond);
  auto part = [&](int i) { return nn::slice_cols(tape, mod, i * H, H); };

  Var h = nn::modulate(tape, nn::layer_norm(tape, x), part(0), part(1));
  const Var att = self_attention(tape, b.qkv, b.out, h, std::move(layout), std::move(rope));
  x = nn::gated_residual(tape, x, part(2), att);

  h = nn::modulate(tape, nn::layer_norm(tape, x), part(3), part(4));
  const Var ff = apply(tape, b.ff2, nn::gelu(tape, apply(tape, b.ff1, h)));
  x = nn::gated_residual(tape, x, part(5), ff);
  check_finite(tape, x, tag);
  return x;
}

namespace {

Matrix map_point_features(const MapSet& map, const ChannelStats& stats) {
  std::vector<Eigen::Matrix<double, 1, kMapFeatures>> rows;
  for (const Lane& lane : map.lanes) {
    std::vector<size_t> idx;
    for (size_t i = 0; i < lane.points.size(); ++i) {
      if (lane.point_is_valid(i)) idx.push_back(i);
    }
    for (size_t j = 0; j < idx.size(); ++j) {
      const Vec2& p = lane.points[idx[j]];
      Vec2 tangent = Vec2::Zero();
      if (idx.size() > 1) {
        const Vec2& a = lane.points[idx[j == 0 ? 0 : j - 1]];
        const Vec2& b = lane.points[idx[j + 1 == idx.size() ? j : j + 1]];
        tangent = b - a;
        const double n = tangent.norm();
        tangent = n > 1e-9 ? Vec2(tangent / n) : Vec2::Zero();
      }
      Eigen::Matrix<double, 1, kMapFeatures> f = Eigen::Matrix<double, 1, kMapFeatures>::Zero();
      f(0) = (p.x() - stats.mean[kX]) / stats.std[kX];
      f(1) = (p.y() - stats.mean[kY]) / stats.std[kY];
      f(2) = tangent.x();
      f(3) = tangent.y();
      f(4 + static_cast<int>(lane.type)) = 1.0;
      rows.push_back(f);
    }
  }
  Matrix out(static_cast<Eigen::Index>(rows.size()), kMapFeatures);
  for (size_t i = 0; i < rows.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = rows[i];
  return out;
}

std::shared_ptr<nn::AttentionLayout> dense_layout(int queries, int keys) {
  nn::AttentionGroup g;
  for (int i = 0; i < queries; ++i) g.queries.push_back(i);
  for (int i = 0; i < keys; ++i) g.keys.push_back(i);
  return std::make_shared<nn::AttentionLayout>(nn::AttentionLayout{g});
}

}  // namespace

Var SceneDenoiser::encode_map(Tape& tape, const MapSet& map) const {
  const int Q = config_.map_queries;
  Var lat = bind(tape, map_latents_);
  const Matrix points = map_point_features(map, stats_);
  if (points.rows() > 0) {
    const Var pts = apply(tape, map_point_, tape.constant(points));
    const Var kp = nn::layer_norm(tape, pts);
    const Var q = apply(tape, map_q_, nn::layer_norm(tape, lat));
    const Var k = apply(tape, map_k_, kp);
    const Var v = apply(tape, map_v_, kp);
    const Var att = nn::attention(tape, q, k, v,
                                  dense_layout(Q, static_cast<int>(points.rows())),
                                  config_.heads);
    lat = nn::add(tape, lat, apply(tape, map_o_, att));
  }
  const Var ff = apply(tape, map_ff2_,
                       nn::gelu(tape, apply(tape, map_ff1_, nn::layer_norm(tape, lat))));
  lat = nn::add(tape, lat, ff);
  const Var sa = self_attention(tape, map_self_qkv_, map_self_o_, nn::layer_norm(tape, lat),
                                dense_layout(Q, Q), nullptr);
  lat = nn::add(tape, lat, sa);
  lat = nn::layer_norm(tape, lat);
  check_finite(tape, lat, "map encoder");
  return lat;
}

Var SceneDenoiser::forward(Tape& tape, std::span<const ForwardItem> items,
                           std::vector<RowRef>& rows) const {
  const int H = config_.hidden;
  const int Q = config_.map_queries;
  const int dh = H / config_.heads;
  const int pairs = dh / 2;
  const int time_pairs = pairs / 2;

  rows.clear();
  for (int i = 0; i < static_cast<int>(items.size()); ++i) {
    const SceneTensor& s = *items[i].noisy;
    if (items[i].k->agents() != s.agents() || items[i].k->frames() != s.frames()) {
      throw std::invalid_argument("forward: noise matrix shape differs from scene");
    }
    for (int a = 0; a < s.agents(); ++a) {
      for (int t = 0; t < s.frames(); ++t) {
        if (s.valid(a, t)) rows.push_back({i, a, t});
      }
    }
  }
  const auto N = static_cast<Eigen::Index>(rows.size());
  if (N == 0) return tape.constant(Matrix::Zero(0, kStateDim));

  Matrix input(N, kInputFeatures);
  std::vector<double> levels(rows.size());
  auto rope = std::make_shared<nn::RotaryTable>();
  rope->cos.resize(N, pairs);
  rope->sin.resize(N, pairs);
  for (Eigen::Index r = 0; r < N; ++r) {
    const RowRef& ref = rows[r];
    const SceneTensor& s = *items[ref.item].noisy;
    const NoiseMatrix& km = *items[ref.item].k;
    input.row(r).setZero();
    for (int c = 0; c < kStateDim; ++c) input(r, c) = s.at(ref.agent, ref.frame, c);
    input(r, kStateDim) = 1.0;
    input(r, kStateDim + 1) = 1.0;
    prior_features(s, km, ref.agent, ref.frame, &input(r, kStateDim + 2));
    const double k = km(ref.agent, ref.frame);
    levels[r] = k;
    const double noise_index = std::round(k * config_.grid_size);
    for (int p = 0; p < pairs; ++p) {
      const bool time_axis = p < time_pairs;
      const int i = time_axis ? p : p - time_pairs;
      const double freq = std::pow(config_.rope_base, -static_cast<double>(i) / time_pairs);
      const double angle = (time_axis ? ref.frame : noise_index) * freq;
      rope->cos(r, p) = std::cos(angle);
      rope->sin(r, p) = std::sin(angle);
    }
  }

  auto temporal = std::make_shared<nn::AttentionLayout>();
  auto spatial = std::make_shared<nn::AttentionLayout>();
  auto cross = std::make_shared<nn::AttentionLayout>();
  {
    int r = 0;
    for (int i = 0; i < static_cast<int>(items.size()); ++i) {
      const SceneTensor& s = *items[i].noisy;
      std::vector<nn::AttentionGroup> per_agent(s.agents());
      std::vector<nn::AttentionGroup> per_frame(s.frames());
      nn::AttentionGroup scene;
      for (; r < N && rows[r].item == i; ++r) {
        per_agent[rows[r].agent].queries.push_back(r);
        per_frame[rows[r].frame].queries.push_back(r);
        scene.queries.push_back(r);
      }
      for (auto& g : per_agent) {
        if (g.queries.empty()) continue;
        g.keys = g.queries;
        temporal->push_back(std::move(g));
      }
      for (auto& g : per_frame) {
        if (g.queries.empty()) continue;
        g.keys = g.queries;
        spatial->push_back(std::move(g));
      }
      for (int q = 0; q < Q; ++q) scene.keys.push_back(i * Q + q);
      cross->push_back(std::move(scene));
    }
  }

  const Var inputs = tape.constant(std::move(input));
  Var x = apply(tape, input_, inputs);
  const Var c = apply(tape, noise2_,
                      nn::silu(tape, apply(tape, noise1_,
                                           tape.constant(noise_level_features(levels, kNoiseFeatures)))));
  const Var cond = nn::silu(tape, c);

  std::vector<Var> maps;
  for (const ForwardItem& item : items) {
    if (tape.value(item.map).rows() != Q || tape.value(item.map).cols() != H) {
      throw std::invalid_argument("forward: map tokens must be Q x H");
    }
    maps.push_back(item.map);
  }
  const Var map_all = maps.size() == 1 ? maps[0] : nn::concat_rows(tape, maps);
  const Var q = apply(tape, cross_q_, nn::layer_norm(tape, x));
  const Var kv = apply(tape, cross_kv_, map_all);
  const Var att = nn::attention(tape, q, nn::slice_cols(tape, kv, 0, H),
                                nn::slice_cols(tape, kv, H, H), cross, config_.heads);
  x = nn::add(tape, x, apply(tape, cross_o_, att));
  check_finite(tape, x, "map cross-attention");

  for (size_t b = 0; b < blocks_.size(); ++b) {
    const bool is_temporal = b % 2 == 0;
    const std::string tag =
        std::string(is_temporal ? "temporal block " : "spatial block ") + std::to_string(b / 2);
    x = block(tape, blocks_[b], x, cond, is_temporal ? temporal : spatial, rope, tag);
  }

  const Var mod = apply(tape, final_mod_, cond);
  const Var h = nn::modulate(tape, nn::layer_norm(tape, x), nn::slice_cols(tape, mod, 0, H),
                             nn::slice_cols(tape, mod, H, H));
  const Var out = nn::add(tape, apply(tape, head_, h), apply(tape, skip_, inputs));
  check_finite(tape, out, "output head");
  return out;
}

MapTokens SceneDenoiser::encode_map(const MapSet& map) const {
  Tape tape(false);
  const Var v = encode_map(tape, map);
  return MapTokens{tape.value(v)};
}

SceneTensor SceneDenoiser::predict(const SceneTensor& noisy, const NoiseMatrix& k,
                                   const MapTokens& map) const {
  Tape tape(false);
  const Var map_var = map.tokens.size() == 0 ? encode_map(tape, MapSet{})
                                             : tape.constant(Matrix(map.tokens));
  const ForwardItem item{&noisy, &k, map_var};
  std::vector<RowRef> rows;
  const Var out = forward(tape, std::span<const ForwardItem>(&item, 1), rows);
  SceneTensor eps(noisy.agents(), noisy.frames());
  eps.valid_mask() = noisy.valid_mask();
  const Matrix& o = tape.value(out);
  for (size_t r = 0; r < rows.size(); ++r) {
    for (int c = 0; c < kStateDim; ++c) {
      eps.at(rows[r].agent, rows[r].frame, c) = o(static_cast<Eigen::Index>(r), c);
    }
  }
  return eps;
}

}  // namespace scenegen
