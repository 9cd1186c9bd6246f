#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "tsim/geometry.hpp"

namespace tsim {

struct AgentState {
  Pose2 pose;
  double speed = 0.0;   // m/s, >= 0
  double length = 4.5;  // m
  double width = 2.0;   // m
  bool valid = true;
};

// One agent's logged trajectory at fixed dt = 0.1 s. Validity lives on the
// per-step states.
struct AgentTrack {
  std::vector<AgentState> states;
};

struct RoadGraph {
  std::vector<std::vector<Vec2>> lane_centerlines;
  std::vector<std::vector<Vec2>> road_edges;
  std::vector<std::vector<Vec2>> drivable_areas;  // simple polygons
};

struct GoalSpec {
  Vec2 position;
  double radius = 2.0;  // m, > 0
};

struct Scenario {
  std::string id;
  RoadGraph road_graph;
  std::vector<AgentTrack> tracks;
  std::vector<GoalSpec> goals;
  std::vector<std::uint8_t> controlled;
  int init_step = 10;
  int horizon_steps = 80;

  int num_agents() const { return static_cast<int>(tracks.size()); }
  // Tracks cover steps [0, init_step + horizon_steps].
  int total_steps() const { return init_step + horizon_steps + 1; }

  // Throws InvariantError with a description of the first violation.
  void validate() const;
};

inline constexpr double kSimDt = 0.1;  // s

// Oriented-box overlap via separating axes; symmetric; exact edge contact is
// not a collision. Throws InvariantError on non-finite poses.
bool collision_check(const AgentState& a, const AgentState& b);

// Center point outside every drivable polygon (even-odd rule, boundary counts
// as inside). Throws InvariantError when there is no drivable area.
bool offroad_check(const AgentState& a, const RoadGraph& rg);

// Euclidean distance from center to goal position <= radius.
bool goal_check(const AgentState& a, const GoalSpec& g);

// JSON scenario files, schema_version 1, lossless double round trip.
// Distinct failures: IoError (unreadable/malformed), SchemaError (version or
// field shape), InvariantError (loads but violates Scenario invariants).
Scenario load_scenario(const std::string& path);
void save_scenario(const Scenario& s, const std::string& path);

std::string scenario_to_json(const Scenario& s);
Scenario scenario_from_json(const std::string& text);

}  // namespace tsim
