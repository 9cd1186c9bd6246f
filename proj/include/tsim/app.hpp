#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "tsim/trainer.hpp"

namespace tsim {

// Exit codes: 0 success, 2 config/usage errors, 1 runtime failures.
inline constexpr int kExitOk = 0;
inline constexpr int kExitRuntime = 1;
inline constexpr int kExitConfig = 2;

int run_cli(int argc, const char* const* argv);

// Subcommand bodies, callable directly from tests.
struct GenDataConfig {
  std::string tmpl = "straight";  // straight | curve | intersection | mixed
  int count = 10;
  int agents = 0;  // 0 = varied per scenario
  std::uint64_t seed = 0;
  std::string out_dir;
  int workers = 0;
};
void cmd_gen_data(const GenDataConfig& cfg);

struct FitVocabConfig {
  std::string scenario_dir;
  std::string out_path;
  int k = 64;
  double radius = 0.0;  // > 0: fixed radius, k as cap; else bisect to k
  std::uint64_t seed = 0;
  int workers = 0;
};
void cmd_fit_vocab(const FitVocabConfig& cfg);

struct TrainRefConfig {
  std::string scenario_dir;
  std::string vocab_path;
  std::string out_dir;
  int epochs = 30;
  double lr = 1e-3;
  double val_fraction = 0.1;
  bool decentralized = false;
  std::uint64_t seed = 0;
  SimConfig sim;
  int workers = 0;
};
void cmd_train_ref(const TrainRefConfig& cfg);

struct EvalRealismConfig {
  std::string scenario_dir;
  std::string vocab_path;
  std::string checkpoint;
  std::string out_dir;
  int samples = 32;
  bool argmax = false;
  std::uint64_t seed = 0;
  SimConfig sim;
  int workers = 0;
};
void cmd_eval_realism(const EvalRealismConfig& cfg);

struct EvalPlannersConfig {
  std::string scenario_dir;
  std::string vocab_path;
  std::string reference_checkpoint;         // for reference_rollout strategy
  std::string background_policy;            // for policy_rollout strategy
  std::vector<std::string> planner_policies;  // checkpoints evaluated as planners
  std::string presets_path;  // empty = builtin presets
  std::vector<std::string> strategies = {"log_replay", "reference_rollout", "policy_rollout"};
  std::string out_dir;
  std::uint64_t seed = 0;
  SimConfig sim;
  int workers = 0;
};
void cmd_eval_planners(const EvalPlannersConfig& cfg);

struct BenchConfig {
  std::string scenario_dir;
  std::string vocab_path;
  std::string policy_checkpoint;
  std::string reference_checkpoint;
  int n_worlds = 8;
  int episodes_per_world = 2;
  int n_seeds = 3;
  std::uint64_t seed = 0;
  std::string out_dir;
  SimConfig sim;
  int workers = 0;
};
void cmd_bench(const BenchConfig& cfg);

struct RolloutDumpConfig {
  std::string scenario_path;
  std::string vocab_path;
  std::string checkpoint;
  std::string out_path;
  std::uint64_t seed = 0;
  SimConfig sim;
  int workers = 0;
};
void cmd_rollout_dump(const RolloutDumpConfig& cfg);

// train config file loading (unknown keys rejected); flags override after.
TrainRunConfig load_train_config(const std::string& path);

}  // namespace tsim
