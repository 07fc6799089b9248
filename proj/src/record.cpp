#include "scenegen/record.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include <json.hpp>

namespace scenegen {

using nlohmann::json;

namespace {

const json& require(const json& obj, const char* key, const std::string& where) {
  if (!obj.is_object()) throw RecordError(where, "expected an object");
  auto it = obj.find(key);
  if (it == obj.end()) throw RecordError(where, std::string("missing key '") + key + "'");
  return *it;
}

double require_number(const json& obj, const char* key, const std::string& where) {
  const json& v = require(obj, key, where);
  if (!v.is_number()) throw RecordError(where + "." + key, "expected a number");
  const double d = v.get<double>();
  if (!std::isfinite(d)) throw RecordError(where + "." + key, "non-finite number");
  return d;
}

int require_count(const json& obj, const char* key, const std::string& where) {
  const json& v = require(obj, key, where);
  if (!v.is_number_integer() || v.get<long long>() < 0) {
    throw RecordError(where + "." + key, "expected a non-negative integer");
  }
  return v.get<int>();
}

std::string optional_string(const json& obj, const char* key, const std::string& where) {
  auto it = obj.find(key);
  if (it == obj.end()) return {};
  if (!it->is_string()) throw RecordError(where + "." + key, "expected a string");
  return it->get<std::string>();
}

double finite_element(const json& arr, size_t i, const std::string& where) {
  if (!arr[i].is_number()) throw RecordError(where, "expected a number at index " + std::to_string(i));
  const double d = arr[i].get<double>();
  if (!std::isfinite(d)) throw RecordError(where, "NaN or infinite coordinate at index " + std::to_string(i));
  return d;
}

// NaN has no JSON literal; nlohmann parses it as null, which is caught above.
ScenarioRecord from_json(const json& doc) {
  ScenarioRecord rec;
  const json& meta = require(doc, "meta", "record");
  rec.meta.dt_s = require_number(meta, "dt_s", "meta");
  rec.meta.history_frames = require_count(meta, "history_frames", "meta");
  rec.meta.current_frames = require_count(meta, "current_frames", "meta");
  rec.meta.future_frames = require_count(meta, "future_frames", "meta");
  rec.meta.range_m = require_number(meta, "range_m", "meta");
  rec.meta.id = optional_string(meta, "id", "meta");
  rec.meta.kind = optional_string(meta, "kind", "meta");
  rec.meta.ego_id = optional_string(meta, "ego_id", "meta");
  rec.meta.attacker_id = optional_string(meta, "attacker_id", "meta");
  if (auto g = meta.find("goals"); g != meta.end()) {
    if (!g->is_array()) throw RecordError("meta.goals", "expected an array");
    for (size_t i = 0; i < g->size(); ++i) {
      const json& e = (*g)[i];
      const std::string gw = "meta.goals[" + std::to_string(i) + "]";
      if (!e.is_array() || e.size() != 2 || !e[0].is_number_integer() || !e[1].is_number_integer()) {
        throw RecordError(gw, "expected [agent_index, frame]");
      }
      rec.meta.goals.push_back({e[0].get<int>(), e[1].get<int>()});
    }
  }
  if (!(rec.meta.dt_s > 0)) throw RecordError("meta.dt_s", "must be positive");
  const int total = rec.meta.total_frames();
  if (total < 1) throw RecordError("meta", "frame split sums to zero");

  const json& agents = require(doc, "agents", "record");
  if (!agents.is_array()) throw RecordError("agents", "expected an array");
  for (size_t i = 0; i < agents.size(); ++i) {
    const std::string where = "agents[" + std::to_string(i) + "]";
    const json& a = agents[i];
    AgentTrack track;
    const json& id = require(a, "id", where);
    if (id.is_string()) {
      track.id = id.get<std::string>();
    } else if (id.is_number_integer()) {
      track.id = std::to_string(id.get<long long>());
    } else {
      throw RecordError(where + ".id", "expected a string or integer");
    }
    track.type = optional_string(a, "type", where);
    if (track.type.empty()) track.type = "vehicle";
    track.length_m = require_number(a, "length_m", where);
    track.width_m = require_number(a, "width_m", where);
    if (!(track.length_m > 0) || !(track.width_m > 0)) {
      throw RecordError(where, "agent '" + track.id + "' has non-positive dimensions");
    }
    const json& states = require(a, "states", where);
    if (!states.is_array()) throw RecordError(where + ".states", "expected an array");
    if (static_cast<int>(states.size()) != total) {
      throw RecordError(where + ".states", "agent '" + track.id + "' has " +
                                               std::to_string(states.size()) +
                                               " frames, meta declares " + std::to_string(total));
    }
    track.states.reserve(states.size());
    for (size_t t = 0; t < states.size(); ++t) {
      const json& s = states[t];
      const std::string sw = where + ".states[" + std::to_string(t) + "]";
      if (s.is_null()) {
        track.states.emplace_back(std::nullopt);
        continue;
      }
      if (!s.is_array() || s.size() != 5) throw RecordError(sw, "expected [x, y, heading_rad, vx, vy] or null");
      AgentState st;
      st.x = finite_element(s, 0, sw);
      st.y = finite_element(s, 1, sw);
      st.heading = finite_element(s, 2, sw);
      st.vx = finite_element(s, 3, sw);
      st.vy = finite_element(s, 4, sw);
      track.states.emplace_back(st);
    }
    rec.agents.push_back(std::move(track));
  }

  const json& lanes = require(doc, "lanes", "record");
  if (!lanes.is_array()) throw RecordError("lanes", "expected an array");
  for (size_t l = 0; l < lanes.size(); ++l) {
    const std::string where = "lanes[" + std::to_string(l) + "]";
    LaneRecord lane;
    const json& type = require(lanes[l], "type", where);
    if (!type.is_string()) throw RecordError(where + ".type", "expected a string");
    try {
      lane.type = lane_type_from_string(type.get<std::string>());
    } catch (const std::invalid_argument& e) {
      throw RecordError(where + ".type", e.what());
    }
    const json& pts = require(lanes[l], "points", where);
    if (!pts.is_array()) throw RecordError(where + ".points", "expected an array");
    for (size_t p = 0; p < pts.size(); ++p) {
      const std::string pw = where + ".points[" + std::to_string(p) + "]";
      if (!pts[p].is_array() || pts[p].size() != 2) throw RecordError(pw, "expected [x, y]");
      lane.points.emplace_back(finite_element(pts[p], 0, pw), finite_element(pts[p], 1, pw));
    }
    rec.lanes.push_back(std::move(lane));
  }
  return rec;
}

json to_json(const ScenarioRecord& rec) {
  json meta = {{"dt_s", rec.meta.dt_s},
               {"history_frames", rec.meta.history_frames},
               {"current_frames", rec.meta.current_frames},
               {"future_frames", rec.meta.future_frames},
               {"range_m", rec.meta.range_m}};
  if (!rec.meta.id.empty()) meta["id"] = rec.meta.id;
  if (!rec.meta.kind.empty()) meta["kind"] = rec.meta.kind;
  if (!rec.meta.ego_id.empty()) meta["ego_id"] = rec.meta.ego_id;
  if (!rec.meta.attacker_id.empty()) meta["attacker_id"] = rec.meta.attacker_id;
  if (!rec.meta.goals.empty()) meta["goals"] = rec.meta.goals;

  json agents = json::array();
  for (const auto& a : rec.agents) {
    json states = json::array();
    for (const auto& s : a.states) {
      if (s) {
        states.push_back({s->x, s->y, s->heading, s->vx, s->vy});
      } else {
        states.push_back(nullptr);
      }
    }
    agents.push_back({{"id", a.id},
                      {"type", a.type},
                      {"length_m", a.length_m},
                      {"width_m", a.width_m},
                      {"states", std::move(states)}});
  }
  json lanes = json::array();
  for (const auto& l : rec.lanes) {
    json pts = json::array();
    for (const auto& p : l.points) pts.push_back({p.x(), p.y()});
    lanes.push_back({{"type", to_string(l.type)}, {"points", std::move(pts)}});
  }
  return {{"meta", std::move(meta)}, {"agents", std::move(agents)}, {"lanes", std::move(lanes)}};
}

}  // namespace

int ScenarioRecord::agent_index(const std::string& id) const {
  for (size_t i = 0; i < agents.size(); ++i) {
    if (agents[i].id == id) return static_cast<int>(i);
  }
  return -1;
}

ScenarioRecord parse_record(const std::string& json_text) {
  json doc;
  try {
    doc = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw RecordError("document", std::string("malformed JSON: ") + e.what());
  }
  return from_json(doc);
}

std::string serialize_record(const ScenarioRecord& record) { return to_json(record).dump(); }

ScenarioRecord read_record(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw RecordError(path, "cannot open file");
  std::stringstream ss;
  ss << in.rdbuf();
  try {
    return parse_record(ss.str());
  } catch (const RecordError& e) {
    throw RecordError(path + ": " + e.location(), e.what());
  }
}

void write_record(const std::string& path, const ScenarioRecord& record) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << serialize_record(record) << '\n';
}

std::vector<ScenarioRecord> read_corpus(std::istream& in) {
  std::vector<ScenarioRecord> out;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      out.push_back(parse_record(line));
    } catch (const RecordError& e) {
      throw RecordError("line " + std::to_string(lineno) + ": " + e.location(), e.what());
    }
  }
  return out;
}

std::vector<ScenarioRecord> read_corpus(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw RecordError(path, "cannot open file");
  return read_corpus(in);
}

void write_corpus(std::ostream& out, std::span<const ScenarioRecord> records) {
  for (const auto& r : records) out << serialize_record(r) << '\n';
}

void write_corpus(const std::string& path, std::span<const ScenarioRecord> records) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  write_corpus(out, records);
}

TokenState to_token(const AgentState& s, double length, double width) {
  return {s.x, s.y, std::sin(s.heading), std::cos(s.heading), s.vx, s.vy, length, width};
}

AgentState to_agent_state(std::span<const double, kStateDim> token) {
  return {token[kX], token[kY], std::atan2(token[kSinHeading], token[kCosHeading]), token[kVx],
          token[kVy]};
}

SceneTensor to_tensor(const ScenarioRecord& record) {
  const int frames = record.meta.total_frames();
  SceneTensor scene(static_cast<int>(record.agents.size()), frames);
  for (int a = 0; a < scene.agents(); ++a) {
    const auto& track = record.agents[a];
    for (int t = 0; t < frames && t < static_cast<int>(track.states.size()); ++t) {
      if (!track.states[t]) continue;
      const TokenState tok = to_token(*track.states[t], track.length_m, track.width_m);
      std::copy(tok.begin(), tok.end(), scene.token(a, t).begin());
      scene.set_valid(a, t, true);
    }
  }
  return scene;
}

MapSet to_map(const ScenarioRecord& record) {
  MapSet map;
  for (const auto& l : record.lanes) map.lanes.push_back(Lane{l.type, l.points, {}});
  return map;
}

ScenarioRecord from_tensor(const ScenarioRecord& base, const SceneTensor& metric) {
  ScenarioRecord out = base;
  for (int a = 0; a < metric.agents() && a < static_cast<int>(out.agents.size()); ++a) {
    auto& track = out.agents[a];
    track.states.assign(metric.frames(), std::nullopt);
    for (int t = 0; t < metric.frames(); ++t) {
      if (metric.valid(a, t)) track.states[t] = to_agent_state(metric.token(a, t));
    }
  }
  return out;
}

ChannelStats fit_stats(std::span<const ScenarioRecord> records) {
  if (records.empty()) throw std::invalid_argument("fit_stats: empty corpus");
  std::vector<SceneTensor> scenes;
  scenes.reserve(records.size());
  for (const auto& r : records) scenes.push_back(to_tensor(r));
  return fit_stats(std::span<const SceneTensor>(scenes));
}

}  // namespace scenegen
