#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "tsim/policy.hpp"
#include "tsim/sim.hpp"

namespace tsim {

// One sampled multi-agent rollout. Arrays are indexed by sim-step offset
// within the simulated window: poses/speeds/valid have horizon+1 entries
// (offset 0 is the shared initial state), event flags have horizon entries
// (offset i-1 holds the events of the move to step init+i).
struct AgentRollout {
  std::vector<Pose2> poses;
  std::vector<double> speeds;
  std::vector<std::uint8_t> valid;
  std::vector<std::uint8_t> collided, offroad;
  bool goal_reached = false;
};

struct WorldRollout {
  std::vector<AgentRollout> agents;
};

struct RolloutSet {
  std::vector<WorldRollout> samples;  // S entries
  std::vector<std::uint64_t> seeds;
};

enum class FeatureExtractor {
  speed,
  accel_mag,
  yaw_rate,
  nearest_agent_dist,
  collision_flag,
  dist_to_road_edge,
  offroad_flag,
};

enum class FeatureCategory { kinematic, interactive, map };

struct FeatureSpec {
  std::string name;
  FeatureExtractor extractor;
  FeatureCategory category;
  double bin_lo = 0.0;
  double bin_hi = 1.0;
  int n_bins = 2;
  double epsilon = 1e-3;  // additive smoothing per bin
};

std::vector<FeatureSpec> default_feature_specs();

struct RealismReport {
  std::vector<int> target_agents;
  std::vector<std::string> feature_names;
  std::vector<std::vector<double>> per_agent;  // m(a,j): [target][feature], NaN = no data
  std::vector<double> per_feature;             // m(j)
  double kinematic = 0.0;
  double interactive = 0.0;
  double map = 0.0;
  double composite = 0.0;
  double min_ade = 0.0;
  double collision_rate = 0.0;
  double offroad_rate = 0.0;
  double goal_rate = 0.0;
  long out_of_range_values = 0;  // histogram end-bin clamps, counted

  void write_csv(const std::string& scenario_id, const std::string& path) const;
  std::string to_json(const std::string& scenario_id) const;
};

struct ControllerRef {
  const LateFusionNet* net = nullptr;
  bool argmax = false;  // deterministic sampling mode
};

// S independent seeded rollouts of the scenario under the controller; seeds
// must be pairwise distinct and S >= 2. Deterministic per seed.
RolloutSet simulate_rollout_set(const ControllerRef& controller, const Scenario& scenario,
                                const TokenVocab& vocab, const SimConfig& config,
                                const std::vector<std::uint64_t>& seeds);

// Histogram NLL realism: per (target agent, feature, valid step) the ground
// truth is scored under the smoothed empirical distribution of the S rollout
// values; per-agent score is exp(-mean NLL); feature scores average over
// agents, categories over member features, composite over the three
// categories with equal weight.
RealismReport realism_score(const RolloutSet& rollouts, const Scenario& gt,
                            const std::vector<FeatureSpec>& specs);

struct MinAdeResult {
  double value = 0.0;
  int excluded_agents = 0;  // target agents without any valid GT step
};
MinAdeResult min_ade(const RolloutSet& rollouts, const Scenario& gt);

struct InfractionRates {
  double collision = 0.0;
  double offroad = 0.0;
  double goal = 0.0;
};
// Fraction of (target agent, rollout) pairs with >= 1 event.
InfractionRates infraction_rates(const RolloutSet& rollouts, const Scenario& gt);

// Everything a feature extractor needs about one trajectory; shared between
// rollout samples and the ground truth so both sides use identical math.
struct FeatureTrajectory {
  const std::vector<Pose2>* poses = nullptr;            // window poses, horizon+1
  const std::vector<std::uint8_t>* collided = nullptr;  // horizon entries
  const std::vector<std::uint8_t>* offroad = nullptr;
  // Positions of the other agents per step offset (only valid ones).
  const std::vector<std::vector<Vec2>>* others = nullptr;
  const RoadGraph* road_graph = nullptr;
  double dt = kSimDt;
};

// Series over step offsets 1..horizon; NaN marks steps where the feature is
// undefined (e.g. acceleration at the first step).
std::vector<double> extract_feature_series(const FeatureSpec& spec, const FeatureTrajectory& t);

}  // namespace tsim
