#include "tsim/sim.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "tsim/common.hpp"

namespace tsim {

WorldState reset(const Scenario& scenario, const SimConfig& config) {
  scenario.validate();
  if (config.policy_every < 1) throw InvariantError("reset: policy_every < 1");
  if (scenario.horizon_steps % config.policy_every != 0) {
    throw InvariantError("reset: horizon_steps not a multiple of policy_every");
  }
  const int n = scenario.num_agents();
  WorldState w;
  w.step = scenario.init_step;
  w.agents.resize(n);
  w.done.assign(n, 0);
  w.removed.assign(n, 0);
  w.cum_events.assign(n, AgentEvents{});
  for (int i = 0; i < n; ++i) {
    w.agents[i] = scenario.tracks[i].states[scenario.init_step];
    if (scenario.controlled[i] && !w.agents[i].valid) {
      throw InvariantError("reset: controlled agent invalid at init_step");
    }
  }
  return w;
}

bool episode_over(const WorldState& world, const Scenario& scenario) {
  return world.step >= scenario.init_step + scenario.horizon_steps;
}

namespace {

Pose2 interpolate_pose(const Pose2& a, const Pose2& b, double t) {
  Pose2 out;
  out.x = a.x + (b.x - a.x) * t;
  out.y = a.y + (b.y - a.y) * t;
  out.heading = normalize_angle(a.heading + normalize_angle(b.heading - a.heading) * t);
  return out;
}

}  // namespace

StepEvents step(WorldState& world, const JointActions& actions, const TokenVocab& vocab,
                const Scenario& scenario, const SimConfig& config,
                std::vector<SubstepSnapshot>* trace) {
  const int n = scenario.num_agents();
  if (episode_over(world, scenario)) throw InvariantError("step: episode already over");
  if ((world.step - scenario.init_step) % config.policy_every != 0) {
    throw InvariantError("step: not at a policy boundary");
  }
  if (static_cast<int>(actions.tokens.size()) != n) {
    throw InvariantError("step: token vector size mismatch");
  }
  const bool has_ego = actions.ego_id >= 0;
  if (has_ego) {
    if (actions.ego_id >= n || !scenario.controlled[actions.ego_id]) {
      throw InvariantError("step: planner ego must be a controlled agent");
    }
    if (actions.ego_poses.size() != 1 &&
        static_cast<int>(actions.ego_poses.size()) != config.policy_every) {
      throw InvariantError("step: ego_poses must hold 1 or policy_every poses");
    }
  }
  for (int i = 0; i < n; ++i) {
    bool needs_token = scenario.controlled[i] && !world.done[i] && world.agent_present(i) &&
                       !(has_ego && i == actions.ego_id);
    if (needs_token) {
      if (actions.tokens[i] < 0 || actions.tokens[i] >= vocab.size()) {
        throw InvariantError("step: missing or out-of-range token for agent " + std::to_string(i));
      }
    } else if (actions.tokens[i] != -1) {
      throw InvariantError("step: action supplied for inactive agent " + std::to_string(i));
    }
  }

  StepEvents events;
  events.collided.assign(n, 0);
  events.offroad.assign(n, 0);
  events.goal_now.assign(n, 0);

  const Pose2 ego_start = has_ego ? world.agents[actions.ego_id].pose : Pose2{};

  for (int sub = 0; sub < config.policy_every; ++sub) {
    world.step += 1;
    const int t = world.step;

    for (int i = 0; i < n; ++i) {
      if (!scenario.controlled[i]) {
        world.agents[i] = scenario.tracks[i].states[t];  // exact log replay
        continue;
      }
      if (world.removed[i]) continue;
      if (world.done[i]) {
        if (config.freeze_on_done) world.agents[i].speed = 0.0;
        continue;
      }
      AgentState& st = world.agents[i];
      if (has_ego && i == actions.ego_id) {
        Pose2 target;
        if (actions.ego_poses.size() == 1) {
          double frac = static_cast<double>(sub + 1) / config.policy_every;
          target = interpolate_pose(ego_start, actions.ego_poses[0], frac);
        } else {
          target = actions.ego_poses[sub];
        }
        double disp = std::hypot(target.x - st.pose.x, target.y - st.pose.y);
        st.pose = target;
        st.pose.heading = normalize_angle(st.pose.heading);
        st.speed = disp / config.dt;
      } else {
        const Pose2& rel = vocab.tokens[actions.tokens[i]].rel_poses[sub];
        st.pose = compose(st.pose, rel);
        st.speed = std::hypot(rel.x, rel.y) / config.dt;
      }
    }

    // Event sweep in fixed agent order.
    std::vector<std::uint8_t> hit(n, 0);
    for (int i = 0; i < n; ++i) {
      if (!world.agent_present(i)) continue;
      for (int j = i + 1; j < n; ++j) {
        if (!world.agent_present(j)) continue;
        if (collision_check(world.agents[i], world.agents[j])) {
          hit[i] = 1;
          hit[j] = 1;
        }
      }
    }
    std::vector<std::uint8_t> sub_offroad(n, 0), sub_goal(n, 0);
    for (int i = 0; i < n; ++i) {
      if (!world.agent_present(i)) continue;
      if (hit[i]) {
        world.cum_events[i].collisions += 1;
        events.collided[i] = 1;
      }
      if (offroad_check(world.agents[i], scenario.road_graph)) {
        world.cum_events[i].offroad_steps += 1;
        events.offroad[i] = 1;
        sub_offroad[i] = 1;
      }
      if (!world.cum_events[i].goal_reached && goal_check(world.agents[i], scenario.goals[i])) {
        world.cum_events[i].goal_reached = true;
        events.goal_now[i] = 1;
        sub_goal[i] = 1;
        if (config.remove_on_goal && scenario.controlled[i]) {
          world.done[i] = 1;
          world.removed[i] = 1;
        }
      }
    }

    if (trace != nullptr) {
      SubstepSnapshot snap;
      snap.step = world.step;
      snap.agents = world.agents;
      snap.present.resize(n);
      for (int i = 0; i < n; ++i) snap.present[i] = world.agent_present(i) ? 1 : 0;
      snap.collided = hit;
      snap.offroad = sub_offroad;
      snap.goal_now = sub_goal;
      trace->push_back(std::move(snap));
    }
  }

  if (episode_over(world, scenario)) {
    for (int i = 0; i < n; ++i) world.done[i] = 1;
  }
  return events;
}

namespace {

struct Candidate {
  double dist;  // quantized, so rigid motions cannot reorder near-ties
  int index;
  bool operator<(const Candidate& o) const {
    return dist != o.dist ? dist < o.dist : index < o.index;
  }
};

// Distances are sorted on a 1 um grid: rotating the world perturbs computed
// distances by ~1e-12 m, which must not change candidate ordering or the
// radius cutoff. Exact ties fall back to the stable index order.
inline double quantize_dist(double d) { return std::round(d * 1e6) / 1e6; }

void fill_features(std::vector<double>& f, const WorldState& world, int agent_id,
                   const Scenario& scenario, const SimConfig& config, const FeatureLayout& layout,
                   bool with_goal, bool radius_cutoff, bool clamp_unit) {
  const AgentState& ego = world.agents[agent_id];
  f.assign(layout.total_dim(), 0.0);

  f[0] = ego.speed / kSpeedScale;
  if (with_goal) {
    Vec2 rel = to_frame(ego.pose, scenario.goals[agent_id].position);
    f[1] = rel.x / kGoalScale;
    f[2] = rel.y / kGoalScale;
    f[3] = 1.0;
  }

  std::vector<Candidate> partners;
  for (int j = 0; j < scenario.num_agents(); ++j) {
    if (j == agent_id || !world.agent_present(j)) continue;
    double d = quantize_dist((world.agents[j].pose.position() - ego.pose.position()).norm());
    if (radius_cutoff && d > config.obs_radius) continue;
    partners.push_back({d, j});
  }
  std::sort(partners.begin(), partners.end());
  const int np = std::min<int>(layout.n_partner, static_cast<int>(partners.size()));
  for (int s = 0; s < np; ++s) {
    const AgentState& p = world.agents[partners[s].index];
    double* slot = f.data() + layout.partner_offset() + s * FeatureLayout::kPartnerDim;
    Vec2 rel = to_frame(ego.pose, p.pose.position());
    double dh = p.pose.heading - ego.pose.heading;
    slot[0] = rel.x / kPosScale;
    slot[1] = rel.y / kPosScale;
    slot[2] = std::cos(dh);
    slot[3] = std::sin(dh);
    slot[4] = p.speed / kSpeedScale;
    slot[5] = p.length / kSizeScale;
    slot[6] = p.width / kSizeScale;
    f[layout.partner_mask_offset() + s] = 1.0;
  }

  std::vector<Candidate> road;
  std::vector<const Vec2*> points;
  std::vector<int> types;
  int gi = 0;
  for (const auto& poly : scenario.road_graph.lane_centerlines) {
    for (const auto& pt : poly) {
      double d = quantize_dist((pt - ego.pose.position()).norm());
      if (!radius_cutoff || d <= config.obs_radius) {
        road.push_back({d, gi});
        points.push_back(&pt);
        types.push_back(0);
      }
      ++gi;
    }
  }
  for (const auto& poly : scenario.road_graph.road_edges) {
    for (const auto& pt : poly) {
      double d = quantize_dist((pt - ego.pose.position()).norm());
      if (!radius_cutoff || d <= config.obs_radius) {
        road.push_back({d, gi});
        points.push_back(&pt);
        types.push_back(1);
      }
      ++gi;
    }
  }
  // road[i].index is the global point id; map back to the compact arrays.
  std::vector<int> order(road.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
  std::sort(order.begin(), order.end(), [&](int a, int b) { return road[a] < road[b]; });
  const int nr = std::min<int>(layout.n_road, static_cast<int>(order.size()));
  for (int s = 0; s < nr; ++s) {
    int src = order[s];
    double* slot = f.data() + layout.road_offset() + s * FeatureLayout::kRoadDim;
    Vec2 rel = to_frame(ego.pose, *points[src]);
    slot[0] = rel.x / kPosScale;
    slot[1] = rel.y / kPosScale;
    slot[2] = types[src] == 0 ? 1.0 : 0.0;
    slot[3] = types[src] == 1 ? 1.0 : 0.0;
    f[layout.road_mask_offset() + s] = 1.0;
  }

  if (clamp_unit) {
    for (double& v : f) v = std::clamp(v, -1.0, 1.0);
  }
}

}  // namespace

Observation build_observation(const WorldState& world, int agent_id,
                              const Scenario& scenario, const SimConfig& config,
                              bool goal_dropout) {
  if (agent_id < 0 || agent_id >= scenario.num_agents() || !world.agent_present(agent_id) ||
      world.done[agent_id]) {
    throw InvariantError("build_observation: inactive agent");
  }
  FeatureLayout layout{config.partner_cap, config.road_cap};
  Observation obs;
  fill_features(obs.features, world, agent_id, scenario, config, layout,
                /*with_goal=*/!goal_dropout, /*radius_cutoff=*/true, /*clamp_unit=*/true);
  return obs;
}

GlobalContext build_global_context(const WorldState& world, int agent_id,
                                   const Scenario& scenario, const SimConfig& config) {
  if (agent_id < 0 || agent_id >= scenario.num_agents() || !world.agent_present(agent_id) ||
      world.done[agent_id]) {
    throw InvariantError("build_global_context: inactive agent");
  }
  FeatureLayout layout{config.ref_partner_cap, config.road_cap};
  GlobalContext ctx;
  fill_features(ctx.features, world, agent_id, scenario, config, layout,
                /*with_goal=*/false, /*radius_cutoff=*/false, /*clamp_unit=*/false);
  return ctx;
}

std::string RolloutDump::header() {
  return "scenario_id,step,agent_id,x,y,heading,speed,collided,offroad,goal";
}

void RolloutDump::record(const std::string& scenario_id, const SubstepSnapshot& snap) {
  for (std::size_t i = 0; i < snap.agents.size(); ++i) {
    const AgentState& a = snap.agents[i];
    std::ostringstream row;
    row.precision(17);
    row << scenario_id << ',' << snap.step << ',' << i << ',' << a.pose.x << ',' << a.pose.y
        << ',' << a.pose.heading << ',' << a.speed << ',' << int(snap.collided[i]) << ','
        << int(snap.offroad[i]) << ',' << int(snap.goal_now[i]);
    rows.push_back(row.str());
  }
}

void RolloutDump::write(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write rollout dump: " + path);
  out << header() << "\n";
  for (const auto& r : rows) out << r << "\n";
}

}  // namespace tsim
