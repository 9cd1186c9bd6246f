#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "tsim/metrics.hpp"
#include "tsim/planners.hpp"
#include "tsim/policy.hpp"

namespace tsim {

enum class StrategyTag { log_replay, reference_rollout, policy_rollout };

struct EvalStrategy {
  StrategyTag tag = StrategyTag::log_replay;
  std::string name;
  const LateFusionNet* controller = nullptr;  // required unless log_replay
};

struct PlannerVariant {
  enum class Kind { idm, frenet, policy };
  Kind kind = Kind::idm;
  std::string name;
  IdmParams idm;
  FrenetParams frenet;
  const LateFusionNet* policy = nullptr;
};

struct CellResult {
  bool ok = false;
  std::string error;
  double score = 0.0;
  double progress = 0.0;
  double ttc_fraction = 0.0;
  double comfort = 0.0;
  bool collision_gate = false;
  bool offroad_gate = false;
};

struct ScoreMatrix {
  std::vector<std::string> planner_names;
  std::vector<std::string> strategy_names;
  std::vector<std::string> scenario_ids;
  // cells[planner][strategy][scenario]
  std::vector<std::vector<std::vector<CellResult>>> cells;

  bool all_cells_present() const;  // every cell is ok or carries an error marker
  void write_csv(const std::string& path) const;
};

// For each (planner, scenario, strategy): the planner drives the lowest-index
// controlled agent while the other controlled agents follow the strategy's
// controller (or the logs); one seeded rollout per cell, PDM-scored against
// the planner's route. Per-cell failures are recorded and the run continues.
ScoreMatrix planner_eval_matrix(const std::vector<PlannerVariant>& planners,
                                const std::vector<Scenario>& scenarios,
                                const std::vector<EvalStrategy>& strategies,
                                const TokenVocab& vocab, const SimConfig& config,
                                const PdmWeights& weights, std::uint64_t seed);

struct CorrelationEntry {
  std::string metric;
  std::optional<double> pearson;   // empty = undefined (zero variance)
  std::optional<double> spearman;
};

struct CorrelationResult {
  int n_planners = 0;
  std::vector<CorrelationEntry> entries;  // score, progress, ttc, comfort
  void write_csv(const std::string& path, const std::string& a, const std::string& b) const;
};

// Scores averaged over scenarios per planner, then correlated across the two
// strategies. Spearman uses average ranks. Requires >= 3 planners with
// complete cells in both strategies.
CorrelationResult correlation_stats(const ScoreMatrix& matrix, int strategy_a, int strategy_b);

std::optional<double> pearson(const std::vector<double>& x, const std::vector<double>& y);
std::optional<double> spearman(const std::vector<double>& x, const std::vector<double>& y);

struct BenchResult {
  std::string controller_name;
  double scenarios_per_sec_mean = 0.0;
  double scenarios_per_sec_std = 0.0;
  double agent_steps_per_sec = 0.0;
  int n_worlds = 0;
  int episodes_per_seed = 0;
  double mean_agents = 0.0;
  int policy_hz = 5;
  std::vector<std::uint64_t> seeds;
  std::string to_json() const;
};

// Wall-clock episodes/sec, >= 3 seeds, one warmup pass excluded per seed.
BenchResult throughput_bench(const ControllerRef& controller, const std::string& name,
                             const std::vector<Scenario>& scenarios, const TokenVocab& vocab,
                             const SimConfig& config, int n_worlds, int episodes_per_world,
                             const std::vector<std::uint64_t>& seeds);

}  // namespace tsim
