#include "tsim/scenario.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include "json.hpp"
#include "tsim/common.hpp"

namespace tsim {

namespace {

using Json = nlohmann::ordered_json;

bool heading_normalized(double h) { return h > -M_PI - 1e-12 && h <= M_PI + 1e-12; }

}  // namespace

void Scenario::validate() const {
  auto fail = [this](const std::string& what) {
    throw InvariantError("scenario '" + id + "': " + what);
  };
  if (init_step < 0) fail("init_step < 0");
  if (horizon_steps < 1) fail("horizon_steps < 1");
  if (tracks.size() != goals.size() || tracks.size() != controlled.size()) {
    fail("tracks/goals/controlled size mismatch");
  }
  if (tracks.empty()) fail("no agents");
  for (const auto& poly : road_graph.lane_centerlines) {
    if (poly.size() < 2) fail("centerline with < 2 points");
  }
  for (const auto& poly : road_graph.road_edges) {
    if (poly.size() < 2) fail("road edge with < 2 points");
  }
  for (const auto& poly : road_graph.drivable_areas) {
    if (poly.size() < 3) fail("drivable polygon with < 3 vertices");
  }
  const int steps = total_steps();
  for (std::size_t a = 0; a < tracks.size(); ++a) {
    const auto& tr = tracks[a];
    if (static_cast<int>(tr.states.size()) != steps) {
      fail("track " + std::to_string(a) + " length != init_step + horizon_steps + 1");
    }
    for (std::size_t t = 0; t < tr.states.size(); ++t) {
      const AgentState& st = tr.states[t];
      if (!st.valid) continue;
      if (!pose_finite(st.pose)) fail("non-finite pose");
      if (!heading_normalized(st.pose.heading)) fail("heading not normalized");
      if (!(st.speed >= 0.0) || !std::isfinite(st.speed)) fail("bad speed");
      if (!(st.length >= st.width) || !(st.width > 0.0)) fail("bad box dimensions");
    }
    if (!(goals[a].radius > 0.0)) fail("goal radius <= 0");
    if (controlled[a] && !tracks[a].states[init_step].valid) {
      fail("controlled agent " + std::to_string(a) + " invalid at init_step");
    }
  }
}

bool collision_check(const AgentState& a, const AgentState& b) {
  if (!pose_finite(a.pose) || !pose_finite(b.pose)) {
    throw InvariantError("collision_check: non-finite pose");
  }
  return obb_overlap(a.pose, a.length, a.width, b.pose, b.length, b.width);
}

bool offroad_check(const AgentState& a, const RoadGraph& rg) {
  if (rg.drivable_areas.empty()) {
    throw InvariantError("offroad_check: no drivable areas");
  }
  Vec2 c = a.pose.position();
  for (const auto& poly : rg.drivable_areas) {
    if (point_in_polygon(c, poly)) return false;
  }
  return true;
}

bool goal_check(const AgentState& a, const GoalSpec& g) {
  return (a.pose.position() - g.position).norm() <= g.radius;
}

namespace {

Json polyline_to_json(const std::vector<Vec2>& pts) {
  Json arr = Json::array();
  for (const auto& p : pts) arr.push_back(Json::array({p.x, p.y}));
  return arr;
}

std::vector<Vec2> polyline_from_json(const Json& arr) {
  std::vector<Vec2> pts;
  pts.reserve(arr.size());
  for (const auto& p : arr) pts.push_back({p.at(0).get<double>(), p.at(1).get<double>()});
  return pts;
}

Json polylines_to_json(const std::vector<std::vector<Vec2>>& polys) {
  Json arr = Json::array();
  for (const auto& p : polys) arr.push_back(polyline_to_json(p));
  return arr;
}

std::vector<std::vector<Vec2>> polylines_from_json(const Json& arr) {
  std::vector<std::vector<Vec2>> out;
  out.reserve(arr.size());
  for (const auto& p : arr) out.push_back(polyline_from_json(p));
  return out;
}

}  // namespace

std::string scenario_to_json(const Scenario& s) {
  Json j;
  j["schema_version"] = 1;
  j["id"] = s.id;
  j["road_graph"]["lane_centerlines"] = polylines_to_json(s.road_graph.lane_centerlines);
  j["road_graph"]["road_edges"] = polylines_to_json(s.road_graph.road_edges);
  j["road_graph"]["drivable_areas"] = polylines_to_json(s.road_graph.drivable_areas);
  Json tracks = Json::array();
  for (const auto& tr : s.tracks) {
    Json states = Json::array();
    for (const auto& st : tr.states) {
      Json js;
      js["pose"] = {{"x", st.pose.x}, {"y", st.pose.y}, {"heading", st.pose.heading}};
      js["speed"] = st.speed;
      js["length"] = st.length;
      js["width"] = st.width;
      js["valid"] = st.valid;
      states.push_back(std::move(js));
    }
    tracks.push_back(Json{{"states", std::move(states)}});
  }
  j["tracks"] = std::move(tracks);
  Json goals = Json::array();
  for (const auto& g : s.goals) {
    goals.push_back(Json{{"position", Json::array({g.position.x, g.position.y})}, {"radius", g.radius}});
  }
  j["goals"] = std::move(goals);
  Json controlled = Json::array();
  for (auto c : s.controlled) controlled.push_back(static_cast<bool>(c));
  j["controlled"] = std::move(controlled);
  j["init_step"] = s.init_step;
  j["horizon_steps"] = s.horizon_steps;
  return j.dump();
}

Scenario scenario_from_json(const std::string& text) {
  Json j;
  try {
    j = Json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("malformed scenario file: ") + e.what());
  }
  if (!j.contains("schema_version") || !j["schema_version"].is_number_integer() ||
      j["schema_version"].get<int>() != 1) {
    throw SchemaError("scenario schema_version missing or unsupported");
  }
  Scenario s;
  try {
    s.id = j.at("id").get<std::string>();
    const Json& rg = j.at("road_graph");
    s.road_graph.lane_centerlines = polylines_from_json(rg.at("lane_centerlines"));
    s.road_graph.road_edges = polylines_from_json(rg.at("road_edges"));
    s.road_graph.drivable_areas = polylines_from_json(rg.at("drivable_areas"));
    for (const auto& jt : j.at("tracks")) {
      AgentTrack tr;
      for (const auto& js : jt.at("states")) {
        AgentState st;
        st.pose.x = js.at("pose").at("x").get<double>();
        st.pose.y = js.at("pose").at("y").get<double>();
        st.pose.heading = js.at("pose").at("heading").get<double>();
        st.speed = js.at("speed").get<double>();
        st.length = js.at("length").get<double>();
        st.width = js.at("width").get<double>();
        st.valid = js.at("valid").get<bool>();
        tr.states.push_back(st);
      }
      s.tracks.push_back(std::move(tr));
    }
    for (const auto& jg : j.at("goals")) {
      GoalSpec g;
      g.position = {jg.at("position").at(0).get<double>(), jg.at("position").at(1).get<double>()};
      g.radius = jg.at("radius").get<double>();
      s.goals.push_back(g);
    }
    for (const auto& jc : j.at("controlled")) s.controlled.push_back(jc.get<bool>() ? 1 : 0);
    s.init_step = j.at("init_step").get<int>();
    s.horizon_steps = j.at("horizon_steps").get<int>();
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError(std::string("scenario field error: ") + e.what());
  }
  s.validate();
  return s;
}

Scenario load_scenario(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open scenario file: " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return scenario_from_json(ss.str());
}

void save_scenario(const Scenario& s, const std::string& path) {
  s.validate();
  std::ofstream out(path);
  if (!out) throw IoError("cannot write scenario file: " + path);
  out << scenario_to_json(s) << "\n";
  if (!out) throw IoError("write failed: " + path);
}

}  // namespace tsim
