#include "scenegen/render.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <limits>
#include <sstream>
#include <stdexcept>

#include "scenegen/geometry.hpp"

namespace scenegen {

namespace {

using Rgb = std::array<double, 3>;

constexpr Rgb kEgoStart{255, 215, 0};
constexpr Rgb kEgoEnd{255, 140, 0};
constexpr Rgb kAttackerStart{220, 20, 20};
constexpr Rgb kAttackerEnd{220, 0, 220};
constexpr Rgb kOtherStart{30, 170, 60};
constexpr Rgb kOtherEnd{30, 60, 220};

std::string blend(const Rgb& a, const Rgb& b, double f) {
  char buf[8];
  std::snprintf(buf, sizeof(buf), "#%02x%02x%02x",
                static_cast<int>(std::lround(a[0] + (b[0] - a[0]) * f)),
                static_cast<int>(std::lround(a[1] + (b[1] - a[1]) * f)),
                static_cast<int>(std::lround(a[2] + (b[2] - a[2]) * f)));
  return buf;
}

}  // namespace

std::string render_svg(const ScenarioRecord& record, const RenderOptions& options) {
  const int T = record.meta.total_frames();
  const int first = std::max(0, options.first_frame);
  const int last = options.last_frame < 0 ? T - 1 : std::min(options.last_frame, T - 1);
  if (first > last) throw std::invalid_argument("render: empty frame range");

  double min_x = std::numeric_limits<double>::infinity();
  double min_y = min_x;
  double max_x = -min_x;
  double max_y = -min_x;
  auto extend = [&](double x, double y) {
    min_x = std::min(min_x, x);
    min_y = std::min(min_y, y);
    max_x = std::max(max_x, x);
    max_y = std::max(max_y, y);
  };
  for (const LaneRecord& l : record.lanes) {
    for (const Vec2& p : l.points) extend(p.x(), p.y());
  }
  for (const AgentTrack& a : record.agents) {
    for (int t = first; t <= last; ++t) {
      if (a.states[t]) extend(a.states[t]->x, a.states[t]->y);
    }
  }
  if (!std::isfinite(min_x)) {
    min_x = min_y = -10.0;
    max_x = max_y = 10.0;
  }
  min_x -= options.margin_m;
  min_y -= options.margin_m;
  max_x += options.margin_m;
  max_y += options.margin_m;
  const double s = options.pixels_per_meter;
  const double width = (max_x - min_x) * s;
  const double height = (max_y - min_y) * s;
  // SVG y grows downward; flip so that +y is up.
  auto px = [&](const Vec2& p) {
    std::ostringstream o;
    o.precision(2);
    o << std::fixed << (p.x() - min_x) * s << ',' << (max_y - p.y()) * s;
    return o.str();
  };

  std::ostringstream svg;
  svg.precision(2);
  svg << std::fixed;
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
      << "\" viewBox=\"0 0 " << width << ' ' << height << "\">\n";
  svg << "<rect width=\"100%\" height=\"100%\" fill=\"#ffffff\"/>\n";
  for (const LaneRecord& l : record.lanes) {
    svg << "<polyline class=\"lane\" fill=\"none\" stroke=\""
        << (l.type == LaneType::kIntersection ? "#b0b0d0" : "#c0c0c0")
        << "\" stroke-width=\"1\" points=\"";
    for (size_t i = 0; i < l.points.size(); ++i) svg << (i ? " " : "") << px(l.points[i]);
    svg << "\"/>\n";
  }
  const int span = std::max(1, last - first);
  for (const AgentTrack& a : record.agents) {
    const bool is_ego = a.id == record.meta.ego_id;
    const bool is_attacker = !record.meta.attacker_id.empty() && a.id == record.meta.attacker_id;
    const Rgb& c0 = is_ego ? kEgoStart : is_attacker ? kAttackerStart : kOtherStart;
    const Rgb& c1 = is_ego ? kEgoEnd : is_attacker ? kAttackerEnd : kOtherEnd;
    for (int t = first; t <= last; ++t) {
      if (!a.states[t]) continue;
      const TokenState token = to_token(*a.states[t], a.length_m, a.width_m);
      const OrientedBox box = OrientedBox::from_token(std::span<const double, kStateDim>(token));
      const std::string colour = blend(c0, c1, static_cast<double>(t - first) / span);
      svg << "<polygon class=\"vehicle\" data-agent=\"" << a.id << "\" data-frame=\"" << t
          << "\" fill=\"" << colour << "\" fill-opacity=\"0.6\" stroke=\"" << colour << "\" points=\"";
      const auto corners = box.corners();
      for (size_t i = 0; i < corners.size(); ++i) svg << (i ? " " : "") << px(corners[i]);
      svg << "\"/>\n";
    }
  }
  svg << "</svg>\n";
  return svg.str();
}

}  // namespace scenegen
