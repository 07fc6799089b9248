#pragma once

#include <string>

#include "scenegen/record.hpp"

namespace scenegen {

struct RenderOptions {
  int first_frame = 0;
  int last_frame = -1;  // inclusive; -1 for the final frame
  double pixels_per_meter = 6.0;
  double margin_m = 4.0;
};

// Top-down SVG: lane polylines plus one box per agent and frame, coloured along time
// (ego yellow to orange, attacker red to magenta, others green to blue).
std::string render_svg(const ScenarioRecord& record, const RenderOptions& options = {});

}  // namespace scenegen
