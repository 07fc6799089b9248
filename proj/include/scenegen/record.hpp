#pragma once

#include <array>
#include <iosfwd>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "scenegen/scene.hpp"

namespace scenegen {

struct RecordMeta {
  double dt_s = 0.5;
  int history_frames = 4;
  int current_frames = 1;
  int future_frames = 16;
  double range_m = 104.0;
  // Optional free-form fields; empty strings are omitted on write.
  std::string id;
  std::string kind;
  std::string ego_id;
  std::string attacker_id;
  // Goal tokens held fixed during generation, as (agent index, frame).
  std::vector<std::array<int, 2>> goals;

  int total_frames() const { return history_frames + current_frames + future_frames; }
  // Frames with index < conditioned_frames() are history plus current.
  int conditioned_frames() const { return history_frames + current_frames; }
  bool operator==(const RecordMeta&) const = default;
};

// Per-frame state as stored on disk (heading in radians).
struct AgentState {
  double x = 0;
  double y = 0;
  double heading = 0;
  double vx = 0;
  double vy = 0;
  bool operator==(const AgentState&) const = default;
};

struct AgentTrack {
  std::string id;
  std::string type = "vehicle";
  double length_m = 4.5;
  double width_m = 2.0;
  std::vector<std::optional<AgentState>> states;
  bool operator==(const AgentTrack&) const = default;
};

struct LaneRecord {
  LaneType type = LaneType::kDriving;
  std::vector<Vec2> points;
  bool operator==(const LaneRecord&) const = default;
};

struct ScenarioRecord {
  RecordMeta meta;
  std::vector<AgentTrack> agents;
  std::vector<LaneRecord> lanes;
  bool operator==(const ScenarioRecord&) const = default;

  int agent_index(const std::string& id) const;  // -1 when absent
};

// Parse failure with a location such as "line 3: agents[1].states".
class RecordError : public std::runtime_error {
 public:
  RecordError(const std::string& location, const std::string& message)
      : std::runtime_error(location + ": " + message), location_(location) {}
  const std::string& location() const { return location_; }

 private:
  std::string location_;
};

ScenarioRecord parse_record(const std::string& json_text);
std::string serialize_record(const ScenarioRecord& record);

ScenarioRecord read_record(const std::string& path);
void write_record(const std::string& path, const ScenarioRecord& record);

// JSON-Lines corpora, one scenario per line.
std::vector<ScenarioRecord> read_corpus(std::istream& in);
std::vector<ScenarioRecord> read_corpus(const std::string& path);
void write_corpus(std::ostream& out, std::span<const ScenarioRecord> records);
void write_corpus(const std::string& path, std::span<const ScenarioRecord> records);

SceneTensor to_tensor(const ScenarioRecord& record);
MapSet to_map(const ScenarioRecord& record);

// Writes tensor tokens back into a copy of `base`; invalid tokens become null.
ScenarioRecord from_tensor(const ScenarioRecord& base, const SceneTensor& metric);

TokenState to_token(const AgentState& state, double length, double width);
AgentState to_agent_state(std::span<const double, kStateDim> token);

ChannelStats fit_stats(std::span<const ScenarioRecord> records);

}  // namespace scenegen
