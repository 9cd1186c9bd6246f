#include "tsim/synthetic.hpp"

#include <algorithm>
#include <cmath>

#include "tsim/common.hpp"
#include "tsim/planners.hpp"
#include "tsim/rng.hpp"

namespace tsim {

ScenarioTemplate parse_template(const std::string& name) {
  if (name == "straight") return ScenarioTemplate::straight;
  if (name == "curve") return ScenarioTemplate::curve;
  if (name == "intersection") return ScenarioTemplate::intersection;
  throw ConfigError("unknown scenario template: " + name);
}

std::string template_name(ScenarioTemplate t) {
  switch (t) {
    case ScenarioTemplate::straight: return "straight";
    case ScenarioTemplate::curve: return "curve";
    case ScenarioTemplate::intersection: return "intersection";
  }
  return "?";
}

namespace {

constexpr double kLaneWidth = 4.0;
constexpr double kPointSpacing = 2.0;
constexpr double kAccelNoiseSigma = 0.3;  // m/s^2

std::vector<Vec2> sampled_line(Vec2 a, Vec2 b, double spacing = kPointSpacing) {
  std::vector<Vec2> pts;
  double len = (b - a).norm();
  int n = std::max(2, static_cast<int>(std::ceil(len / spacing)) + 1);
  for (int i = 0; i < n; ++i) {
    double t = static_cast<double>(i) / (n - 1);
    pts.push_back(a + (b - a) * t);
  }
  return pts;
}

std::vector<Vec2> sampled_arc(Vec2 center, double radius, double a0, double a1,
                              double spacing = kPointSpacing) {
  std::vector<Vec2> pts;
  double arc = std::abs(a1 - a0) * radius;
  int n = std::max(2, static_cast<int>(std::ceil(arc / spacing)) + 1);
  for (int i = 0; i < n; ++i) {
    double a = a0 + (a1 - a0) * i / (n - 1);
    pts.push_back({center.x + radius * std::cos(a), center.y + radius * std::sin(a)});
  }
  return pts;
}

RoadGraph straight_road() {
  RoadGraph rg;
  for (double y : {-kLaneWidth, 0.0, kLaneWidth}) {
    rg.lane_centerlines.push_back(sampled_line({0.0, y}, {400.0, y}));
  }
  rg.road_edges.push_back(sampled_line({0.0, -1.5 * kLaneWidth}, {400.0, -1.5 * kLaneWidth}));
  rg.road_edges.push_back(sampled_line({0.0, 1.5 * kLaneWidth}, {400.0, 1.5 * kLaneWidth}));
  rg.drivable_areas.push_back({{0.0, -1.5 * kLaneWidth},
                               {400.0, -1.5 * kLaneWidth},
                               {400.0, 1.5 * kLaneWidth},
                               {0.0, 1.5 * kLaneWidth}});
  return rg;
}

RoadGraph curve_road() {
  RoadGraph rg;
  const Vec2 center{0.0, 0.0};
  const double r_mid = 120.0;
  const double a0 = -M_PI / 3.0, a1 = M_PI / 3.0;
  for (double r : {r_mid - kLaneWidth, r_mid, r_mid + kLaneWidth}) {
    rg.lane_centerlines.push_back(sampled_arc(center, r, a0, a1));
  }
  double r_in = r_mid - 1.5 * kLaneWidth, r_out = r_mid + 1.5 * kLaneWidth;
  rg.road_edges.push_back(sampled_arc(center, r_in, a0, a1));
  rg.road_edges.push_back(sampled_arc(center, r_out, a0, a1));
  std::vector<Vec2> poly = sampled_arc(center, r_out, a0, a1);
  std::vector<Vec2> inner = sampled_arc(center, r_in, a1, a0);
  poly.insert(poly.end(), inner.begin(), inner.end());
  rg.drivable_areas.push_back(std::move(poly));
  return rg;
}

RoadGraph intersection_road() {
  RoadGraph rg;
  const double half = 0.5 * kLaneWidth;  // lane offsets +-2
  const double edge = 1.5 * kLaneWidth;  // edges +-6 (two lanes + margin)
  // East-west road: eastbound at y=-2, westbound at y=+2.
  rg.lane_centerlines.push_back(sampled_line({-200.0, -half}, {200.0, -half}));
  rg.lane_centerlines.push_back(sampled_line({200.0, half}, {-200.0, half}));
  // North-south road: northbound at x=+2, southbound at x=-2.
  rg.lane_centerlines.push_back(sampled_line({half, -200.0}, {half, 200.0}));
  rg.lane_centerlines.push_back(sampled_line({-half, 200.0}, {-half, -200.0}));
  // Edges stop at the junction box.
  for (double sy : {-edge, edge}) {
    rg.road_edges.push_back(sampled_line({-200.0, sy}, {-edge, sy}));
    rg.road_edges.push_back(sampled_line({edge, sy}, {200.0, sy}));
  }
  for (double sx : {-edge, edge}) {
    rg.road_edges.push_back(sampled_line({sx, -200.0}, {sx, -edge}));
    rg.road_edges.push_back(sampled_line({sx, edge}, {sx, 200.0}));
  }
  rg.drivable_areas.push_back({{-200.0, -edge}, {200.0, -edge}, {200.0, edge}, {-200.0, edge}});
  rg.drivable_areas.push_back({{-edge, -200.0}, {edge, -200.0}, {edge, 200.0}, {-edge, 200.0}});
  return rg;
}

struct SpawnedAgent {
  int lane = 0;
  double arc = 0.0;
  AgentState state;
  IdmParams idm;
};

// Attempt one full scenario roll; returns false when the logged tracks
// violate an infraction predicate (caller resamples the spawn).
bool roll_tracks(const RoadGraph& rg, std::vector<SpawnedAgent>& agents,
                 int total_steps, Rng& rng, std::vector<AgentTrack>& out) {
  const int n = static_cast<int>(agents.size());
  out.assign(n, AgentTrack{});
  for (int a = 0; a < n; ++a) {
    out[a].states.reserve(total_steps);
    out[a].states.push_back(agents[a].state);
  }
  std::vector<AgentState> cur(n);
  for (int a = 0; a < n; ++a) cur[a] = agents[a].state;

  for (int t = 1; t < total_steps; ++t) {
    std::vector<AgentState> next(n);
    for (int a = 0; a < n; ++a) {
      PlannerView view;
      view.ego = cur[a];
      for (int b = 0; b < n; ++b) {
        if (b != a) view.others.push_back(cur[b]);
      }
      const auto& route = rg.lane_centerlines[agents[a].lane];
      Pose2 next_pose = idm_plan(view, agents[a].idm, route);
      // Accel noise keeps the expert distribution stochastic: perturb the
      // implied speed and re-integrate along the planned heading.
      double planned_speed = std::hypot(next_pose.x - cur[a].pose.x, next_pose.y - cur[a].pose.y) / kSimDt;
      double noisy_speed = std::max(0.0, planned_speed + kAccelNoiseSigma * rng.normal() * kSimDt);
      AgentState st = cur[a];
      st.pose.heading = next_pose.heading;
      st.pose.x = cur[a].pose.x + noisy_speed * kSimDt * std::cos(next_pose.heading);
      st.pose.y = cur[a].pose.y + noisy_speed * kSimDt * std::sin(next_pose.heading);
      st.speed = noisy_speed;
      next[a] = st;
    }
    cur = std::move(next);
    for (int a = 0; a < n; ++a) out[a].states.push_back(cur[a]);
  }

  // Infraction sweep over every logged step.
  for (int t = 0; t < total_steps; ++t) {
    for (int a = 0; a < n; ++a) {
      AgentState sa;
      sa = out[a].states[t];
      if (offroad_check(sa, rg)) return false;
      for (int b = a + 1; b < n; ++b) {
        if (collision_check(sa, out[b].states[t])) return false;
      }
    }
  }
  return true;
}

}  // namespace

Scenario generate_synthetic_scenario(ScenarioTemplate tmpl, int n_agents,
                                     std::uint64_t seed) {
  if (n_agents < 1) throw InvariantError("generate_synthetic_scenario: n_agents < 1");

  Scenario scn;
  scn.id = template_name(tmpl) + "_" + std::to_string(seed) + "_" + std::to_string(n_agents);
  switch (tmpl) {
    case ScenarioTemplate::straight: scn.road_graph = straight_road(); break;
    case ScenarioTemplate::curve: scn.road_graph = curve_road(); break;
    case ScenarioTemplate::intersection: scn.road_graph = intersection_road(); break;
  }
  scn.init_step = 10;
  scn.horizon_steps = 80;
  const int total = scn.total_steps();
  const auto& lanes = scn.road_graph.lane_centerlines;

  constexpr int kMaxAttempts = 50;
  for (int attempt = 0; attempt < kMaxAttempts; ++attempt) {
    Rng rng(derive_seed(seed, 0x7370776eULL + attempt));  // "spwn"
    std::vector<SpawnedAgent> agents;
    bool spawn_ok = true;
    for (int a = 0; a < n_agents && spawn_ok; ++a) {
      bool placed = false;
      for (int trial = 0; trial < 40 && !placed; ++trial) {
        SpawnedAgent sa;
        sa.lane = rng.uniform_int(static_cast<int>(lanes.size()));
        const auto& lane = lanes[sa.lane];
        double len = polyline_length(lane);
        sa.arc = rng.uniform(10.0, std::max(11.0, len - 90.0));
        Pose2 p = pose_at_arclength(lane, sa.arc);
        sa.state.pose = p;
        sa.state.length = rng.uniform(4.2, 5.0);
        sa.state.width = rng.uniform(1.8, 2.1);
        sa.idm.desired_speed = rng.uniform(8.0, 15.0);
        sa.idm.max_accel = 2.0;
        sa.idm.comfort_decel = 3.0;
        sa.idm.min_spacing = 2.0;
        sa.idm.time_headway = 1.5;
        sa.idm.aggressiveness = 0.5;
        sa.idm.perception_range = 60.0;
        sa.state.speed = sa.idm.desired_speed * rng.uniform(0.5, 0.95);
        bool clear = true;
        for (const auto& other : agents) {
          // Grown separation so spawns are not wedged together.
          if (obb_sat_margin(sa.state.pose, sa.state.length, sa.state.width, other.state.pose,
                             other.state.length, other.state.width) < 8.0) {
            clear = false;
            break;
          }
        }
        if (clear) {
          agents.push_back(sa);
          placed = true;
        }
      }
      spawn_ok = placed;
    }
    if (!spawn_ok) continue;

    std::vector<AgentTrack> tracks;
    if (!roll_tracks(scn.road_graph, agents, total, rng, tracks)) continue;

    scn.tracks = std::move(tracks);
    scn.goals.clear();
    scn.controlled.assign(n_agents, 1);
    for (int a = 0; a < n_agents; ++a) {
      GoalSpec g;
      g.position = scn.tracks[a].states.back().pose.position();
      g.radius = 2.0;
      scn.goals.push_back(g);
    }
    scn.validate();
    return scn;
  }
  throw InvariantError("generate_synthetic_scenario: spawn retries exhausted");
}

}  // namespace tsim
