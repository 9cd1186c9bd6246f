#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "tsim/scenario.hpp"
#include "tsim/tokenizer.hpp"

namespace tsim {

struct SimConfig {
  double dt = kSimDt;
  int policy_every = 2;   // sim steps per policy step (5 Hz policy, 10 Hz sim)
  int horizon_steps = 80; // default episode length in sim steps
  bool remove_on_goal = false;
  bool freeze_on_done = true;
  int partner_cap = 8;       // M
  int road_cap = 64;         // R
  int ref_partner_cap = 32;  // M_ref, >= partner_cap
  double obs_radius = 50.0;  // m
};

// Fixed feature scaling constants shared by observation and context builders
// (and by BC dataset construction).
inline constexpr double kSpeedScale = 40.0;
inline constexpr double kGoalScale = 100.0;
inline constexpr double kPosScale = 50.0;
inline constexpr double kSizeScale = 10.0;

// Flat feature layout: [ego(4) | partners n*7 | partner mask n | road r*4 |
// road mask r]. Ego = (speed, goal dx, goal dy, goal present); partner slot =
// (rel x, rel y, cos dh, sin dh, speed, length, width); road point = (rel x,
// rel y, is centerline, is edge).
struct FeatureLayout {
  int n_partner = 8;
  int n_road = 64;

  static constexpr int kEgoDim = 4;
  static constexpr int kPartnerDim = 7;
  static constexpr int kRoadDim = 4;

  int ego_offset() const { return 0; }
  int partner_offset() const { return kEgoDim; }
  int partner_mask_offset() const { return kEgoDim + n_partner * kPartnerDim; }
  int road_offset() const { return partner_mask_offset() + n_partner; }
  int road_mask_offset() const { return road_offset() + n_road * kRoadDim; }
  int total_dim() const { return road_mask_offset() + n_road; }
};

struct Observation {
  std::vector<double> features;
};

struct GlobalContext {
  std::vector<double> features;
};

struct AgentEvents {
  int collisions = 0;
  int offroad_steps = 0;
  bool goal_reached = false;
};

struct WorldState {
  int step = 0;  // absolute sim step, indexes the logged tracks
  std::vector<AgentState> agents;
  std::vector<std::uint8_t> done;
  std::vector<std::uint8_t> removed;  // remove_on_goal took the agent out
  std::vector<AgentEvents> cum_events;

  bool agent_present(int i) const { return agents[i].valid && !removed[i]; }
};

// Per policy step, per agent.
struct StepEvents {
  std::vector<std::uint8_t> collided;
  std::vector<std::uint8_t> offroad;
  std::vector<std::uint8_t> goal_now;  // first achievement only
};

// Token per controlled agent (-1 for uncontrolled/done/removed agents), plus
// an optional planner-mode ego that follows raw next-poses, one per sim
// sub-step of the policy step.
struct JointActions {
  std::vector<int> tokens;
  int ego_id = -1;
  std::vector<Pose2> ego_poses;
};

WorldState reset(const Scenario& scenario, const SimConfig& config);

// Per-sub-step snapshot for consumers that need the 10 Hz series.
struct SubstepSnapshot {
  int step = 0;
  std::vector<AgentState> agents;
  std::vector<std::uint8_t> present;
  std::vector<std::uint8_t> collided, offroad, goal_now;
};

// Advances one policy step (config.policy_every sim sub-steps). Controlled
// agents chain the chosen token's relative poses; the planner-mode ego
// follows its given poses; everyone else replays the logs bit-for-bit.
// Events are evaluated after every sub-step in fixed agent order; trace, when
// given, receives one snapshot per sub-step.
StepEvents step(WorldState& world, const JointActions& actions, const TokenVocab& vocab,
                const Scenario& scenario, const SimConfig& config,
                std::vector<SubstepSnapshot>* trace = nullptr);

bool episode_over(const WorldState& world, const Scenario& scenario);

Observation build_observation(const WorldState& world, int agent_id,
                              const Scenario& scenario, const SimConfig& config,
                              bool goal_dropout);

GlobalContext build_global_context(const WorldState& world, int agent_id,
                                   const Scenario& scenario, const SimConfig& config);

// Per-sim-step CSV: scenario_id,step,agent_id,x,y,heading,speed,collided,offroad,goal
struct RolloutDump {
  static std::string header();
  std::vector<std::string> rows;
  void record(const std::string& scenario_id, const SubstepSnapshot& snap);
  void write(const std::string& path) const;
};

}  // namespace tsim
