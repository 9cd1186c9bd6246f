#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "tsim/policy.hpp"
#include "tsim/sim.hpp"

namespace tsim {

struct RewardConfig {
  double w_goal = 0.0;
  double w_collided = 0.75;
  double w_offroad = 0.75;
  double w_humanlike = 0.0;  // alpha, weight on log pi_ref(a|s)
  double kl_beta = 1.0;      // beta, KL(pi_ref || pi_theta) loss weight
  double goal_dropout_p = 0.5;
};

struct PpoConfig {
  double gamma = 0.99;
  double gae_lambda = 0.95;
  double clip_coef = 0.2;
  int update_epochs = 4;
  double ent_coef = 1e-4;
  double vf_coef = 0.3;
  double max_grad_norm = 0.5;
  double lr = 3e-4;
  bool norm_adv = true;
  bool anneal_lr = false;
  int n_parallel_worlds = 16;
  int minibatch_size = 1024;
  long total_env_steps = 2000000;
};

// One transition per (world, agent, policy step); each (world, agent)
// trajectory occupies a contiguous segment.
struct RolloutBuffer {
  int obs_dim = 0;
  int n_actions = 0;
  std::vector<double> obs;
  std::vector<int> actions;
  std::vector<double> logp_old;
  std::vector<double> values;
  std::vector<double> ref_log_probs;  // full reference distribution, K per row
  std::vector<double> humanlike_logp; // log pi_ref(a_t | s_t)
  std::vector<double> kl_at_collect;  // KL(ref || policy) at collection time
  std::vector<std::uint8_t> ev_collided, ev_offroad, ev_goal_first;
  std::vector<std::uint8_t> done;
  std::vector<double> rewards, advantages, returns;
  std::vector<std::pair<int, int>> segments;  // (start, length)

  int size() const { return static_cast<int>(actions.size()); }
};

// Runs one episode per scenario in the batch (data-parallel across worlds,
// output independent of thread count). Goal dropout is sampled once per
// agent per episode; the reference is queried in one batched forward per
// world step and its full distribution stored.
RolloutBuffer collect_rollouts(const LateFusionNet& policy, const LateFusionNet& reference,
                               const std::vector<const Scenario*>& scenario_batch,
                               const TokenVocab& vocab, const SimConfig& sim_config,
                               const RewardConfig& reward_config, std::uint64_t seed);

// r = w_goal*I[goal] - w_collided*I[collision] - w_offroad*I[offroad]
//     + alpha * max(log pi_ref(a|s), log 1e-20)
void assemble_rewards(RolloutBuffer& buffer, const RewardConfig& config);

void compute_gae(RolloutBuffer& buffer, double gamma, double lambda, bool norm_adv);

struct PpoLossStats {
  double policy_loss = 0.0;
  double value_loss = 0.0;
  double entropy = 0.0;
  double kl = 0.0;
  double clip_fraction = 0.0;
  double total = 0.0;
};

// Loss and d(loss)/d(logits, values) for a minibatch of buffer rows, exactly
// as ppo_update consumes them; exposed for the finite-difference tests.
PpoLossStats ppo_loss_and_grads(const double* logits, const double* values, int batch, int k,
                                const RolloutBuffer& buffer, const int* indices,
                                const PpoConfig& ppo, const RewardConfig& reward,
                                double* dlogits, double* dvalues);

struct TrainReportRow {
  long update = 0;
  long env_steps = 0;
  double mean_task_reward = 0.0;
  double mean_reward = 0.0;
  double mean_kl = 0.0;  // KL(ref || policy), collection-time average
  double entropy = 0.0;
  double policy_loss = 0.0;
  double value_loss = 0.0;
  double clip_fraction = 0.0;
  double collision_rate = 0.0;
  double offroad_rate = 0.0;
  double goal_rate = 0.0;
};

struct TrainReport {
  std::vector<TrainReportRow> rows;
  static std::string csv_header();
  void write_csv(const std::string& path) const;
};

// Clipped-surrogate PPO epochs over shuffled minibatches with the forward-KL
// penalty beta * KL(stored ref || current policy) recomputed every epoch.
// Throws InvariantError with diagnostics when the loss goes non-finite.
TrainReportRow ppo_update(LateFusionNet& policy, AdamState& adam, RolloutBuffer& buffer,
                          const PpoConfig& ppo, const RewardConfig& reward,
                          std::uint64_t update_seed);

struct TrainRunConfig {
  std::string scenario_dir;
  std::string vocab_path;
  std::string ref_checkpoint;
  std::string out_dir;
  std::uint64_t seed = 0;
  SimConfig sim;
  RewardConfig reward;
  PpoConfig ppo;
  long checkpoint_every = 0;  // updates between checkpoints; 0 = final only
  std::string resume_from;
};

// Full loop: collect -> assemble -> GAE -> update until total_env_steps.
// Writes train_report.csv, periodic checkpoints, and checkpoint_final.json
// under out_dir. Resuming from a checkpoint continues the identical seed
// streams. Returns the report rows produced by this invocation.
TrainReport train(const TrainRunConfig& cfg, LateFusionNet* out_policy = nullptr);

std::vector<std::string> list_scenario_files(const std::string& dir);
std::vector<Scenario> load_scenario_dir(const std::string& dir);

}  // namespace tsim
