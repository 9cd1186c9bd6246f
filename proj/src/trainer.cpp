#include "tsim/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "json.hpp"
#include "tsim/common.hpp"

namespace tsim {

namespace {

// Per-(world, agent) trajectory collected before concatenation.
struct AgentTraj {
  std::vector<double> obs;
  std::vector<int> actions;
  std::vector<double> logp_old, values, ref_log_probs, humanlike_logp, kl_at_collect;
  std::vector<std::uint8_t> ev_collided, ev_offroad, ev_goal_first, done;
  int count = 0;
};

struct WorldResult {
  std::vector<AgentTraj> trajs;  // per agent (controlled ones filled)
};

WorldResult collect_world(const LateFusionNet& policy, const LateFusionNet& reference,
                          const Scenario& scenario, const TokenVocab& vocab,
                          const SimConfig& sim_config, const RewardConfig& reward_config,
                          std::uint64_t world_seed) {
  const int n = scenario.num_agents();
  const int K = policy.spec().n_actions;
  const int obs_dim = policy.spec().layout.total_dim();
  const int ref_dim = reference.spec().layout.total_dim();

  WorldResult result;
  result.trajs.resize(n);

  WorldState world = reset(scenario, sim_config);

  // Goal dropout, sampled once per agent per episode in agent index order.
  std::vector<std::uint8_t> dropout(n, 0);
  {
    Rng rng(derive_seed(world_seed, 0x64726f70ULL));
    for (int i = 0; i < n; ++i) {
      bool d = rng.bernoulli(reward_config.goal_dropout_p);
      if (scenario.controlled[i]) dropout[i] = d ? 1 : 0;
    }
  }

  FusionCache pol_cache, ref_cache;
  std::vector<double> obs_batch, ctx_batch, logits, values, ref_logits;
  std::vector<double> lp(K), ref_lp(K);
  int policy_step = 0;
  while (!episode_over(world, scenario)) {
    std::vector<int> active;
    for (int i = 0; i < n; ++i) {
      if (scenario.controlled[i] && world.agent_present(i) && !world.done[i]) active.push_back(i);
    }
    const int B = static_cast<int>(active.size());
    JointActions actions;
    actions.tokens.assign(n, -1);
    StepEvents events;
    if (B == 0) {
      events = step(world, actions, vocab, scenario, sim_config);
      ++policy_step;
      continue;
    }

    obs_batch.resize(static_cast<std::size_t>(B) * obs_dim);
    ctx_batch.resize(static_cast<std::size_t>(B) * ref_dim);
    for (int b = 0; b < B; ++b) {
      Observation o = build_observation(world, active[b], scenario, sim_config, dropout[active[b]]);
      std::copy(o.features.begin(), o.features.end(),
                obs_batch.begin() + static_cast<long>(b) * obs_dim);
      std::vector<double> ref_in =
          reference.spec().input_is_context
              ? build_global_context(world, active[b], scenario, sim_config).features
              : build_observation(world, active[b], scenario, sim_config, false).features;
      std::copy(ref_in.begin(), ref_in.end(), ctx_batch.begin() + static_cast<long>(b) * ref_dim);
    }

    logits.resize(static_cast<std::size_t>(B) * K);
    values.resize(B);
    policy.forward(obs_batch.data(), B, pol_cache, /*train=*/false, 0, logits.data(), values.data());
    ref_logits.resize(static_cast<std::size_t>(B) * K);
    reference.forward(ctx_batch.data(), B, ref_cache, /*train=*/false, 0, ref_logits.data(), nullptr);

    Rng action_rng(derive_seed(world_seed, 0xac7100ULL, policy_step));
    std::vector<int> chosen(B);
    std::vector<double> logp(B);
    for (int b = 0; b < B; ++b) {
      log_softmax(logits.data() + static_cast<long>(b) * K, K, lp.data());
      CategoricalDist d;
      d.log_probs.assign(lp.begin(), lp.end());
      int a = d.sample(action_rng);
      chosen[b] = a;
      logp[b] = lp[a];
      actions.tokens[active[b]] = a;
    }

    events = step(world, actions, vocab, scenario, sim_config);

    for (int b = 0; b < B; ++b) {
      const int i = active[b];
      AgentTraj& tr = result.trajs[i];
      const double* ob = obs_batch.data() + static_cast<long>(b) * obs_dim;
      tr.obs.insert(tr.obs.end(), ob, ob + obs_dim);
      tr.actions.push_back(chosen[b]);
      tr.logp_old.push_back(logp[b]);
      tr.values.push_back(values[b]);
      log_softmax(ref_logits.data() + static_cast<long>(b) * K, K, ref_lp.data());
      tr.ref_log_probs.insert(tr.ref_log_probs.end(), ref_lp.begin(), ref_lp.end());
      tr.humanlike_logp.push_back(ref_lp[chosen[b]]);
      log_softmax(logits.data() + static_cast<long>(b) * K, K, lp.data());
      tr.kl_at_collect.push_back(kl_from_logprobs(ref_lp, lp));
      tr.ev_collided.push_back(events.collided[i]);
      tr.ev_offroad.push_back(events.offroad[i]);
      tr.ev_goal_first.push_back(events.goal_now[i]);
      bool terminal = episode_over(world, scenario) || world.done[i] || world.removed[i];
      tr.done.push_back(terminal ? 1 : 0);
      tr.count += 1;
    }
    ++policy_step;
  }
  return result;
}

}  // namespace

RolloutBuffer collect_rollouts(const LateFusionNet& policy, const LateFusionNet& reference,
                               const std::vector<const Scenario*>& scenario_batch,
                               const TokenVocab& vocab, const SimConfig& sim_config,
                               const RewardConfig& reward_config, std::uint64_t seed) {
  if (policy.spec().n_actions != reference.spec().n_actions ||
      policy.spec().n_actions != vocab.size()) {
    throw InvariantError("collect_rollouts: policy/reference vocabulary mismatch");
  }
  const int W = static_cast<int>(scenario_batch.size());
  std::vector<WorldResult> results(W);

#ifdef _OPENMP
#pragma omp parallel for schedule(dynamic) num_threads(max_workers())
#endif
  for (int w = 0; w < W; ++w) {
    results[w] = collect_world(policy, reference, *scenario_batch[w], vocab, sim_config,
                               reward_config, derive_seed(seed, 0x776f726cULL, w));
  }

  RolloutBuffer buf;
  buf.obs_dim = policy.spec().layout.total_dim();
  buf.n_actions = policy.spec().n_actions;
  for (int w = 0; w < W; ++w) {
    for (auto& tr : results[w].trajs) {
      if (tr.count == 0) continue;
      int start = buf.size();
      buf.obs.insert(buf.obs.end(), tr.obs.begin(), tr.obs.end());
      buf.actions.insert(buf.actions.end(), tr.actions.begin(), tr.actions.end());
      buf.logp_old.insert(buf.logp_old.end(), tr.logp_old.begin(), tr.logp_old.end());
      buf.values.insert(buf.values.end(), tr.values.begin(), tr.values.end());
      buf.ref_log_probs.insert(buf.ref_log_probs.end(), tr.ref_log_probs.begin(), tr.ref_log_probs.end());
      buf.humanlike_logp.insert(buf.humanlike_logp.end(), tr.humanlike_logp.begin(), tr.humanlike_logp.end());
      buf.kl_at_collect.insert(buf.kl_at_collect.end(), tr.kl_at_collect.begin(), tr.kl_at_collect.end());
      buf.ev_collided.insert(buf.ev_collided.end(), tr.ev_collided.begin(), tr.ev_collided.end());
      buf.ev_offroad.insert(buf.ev_offroad.end(), tr.ev_offroad.begin(), tr.ev_offroad.end());
      buf.ev_goal_first.insert(buf.ev_goal_first.end(), tr.ev_goal_first.begin(), tr.ev_goal_first.end());
      buf.done.insert(buf.done.end(), tr.done.begin(), tr.done.end());
      buf.segments.emplace_back(start, tr.count);
    }
  }
  buf.rewards.assign(buf.size(), 0.0);
  buf.advantages.assign(buf.size(), 0.0);
  buf.returns.assign(buf.size(), 0.0);
  return buf;
}

void assemble_rewards(RolloutBuffer& buffer, const RewardConfig& config) {
  for (int i = 0; i < buffer.size(); ++i) {
    double humanlike = std::max(buffer.humanlike_logp[i], kLogProbFloor);
    buffer.rewards[i] = config.w_goal * buffer.ev_goal_first[i] -
                        config.w_collided * buffer.ev_collided[i] -
                        config.w_offroad * buffer.ev_offroad[i] +
                        config.w_humanlike * humanlike;
  }
}

void compute_gae(RolloutBuffer& buffer, double gamma, double lambda, bool norm_adv) {
  for (const auto& [start, len] : buffer.segments) {
    double gae = 0.0;
    for (int t = len - 1; t >= 0; --t) {
      const int idx = start + t;
      const double nonterminal = buffer.done[idx] ? 0.0 : 1.0;
      const double v_next = (t + 1 < len) ? buffer.values[idx + 1] : 0.0;
      const double delta =
          buffer.rewards[idx] + gamma * v_next * nonterminal - buffer.values[idx];
      gae = delta + gamma * lambda * nonterminal * gae;
      buffer.advantages[idx] = gae;
      buffer.returns[idx] = gae + buffer.values[idx];
    }
  }
  if (norm_adv && buffer.size() > 1) {
    double mean = 0.0;
    for (double a : buffer.advantages) mean += a;
    mean /= buffer.size();
    double var = 0.0;
    for (double a : buffer.advantages) var += (a - mean) * (a - mean);
    double std = std::sqrt(var / buffer.size());
    for (double& a : buffer.advantages) a = (a - mean) / (std + 1e-8);
  }
}

PpoLossStats ppo_loss_and_grads(const double* logits, const double* values, int batch, int k,
                                const RolloutBuffer& buffer, const int* indices,
                                const PpoConfig& ppo, const RewardConfig& reward,
                                double* dlogits, double* dvalues) {
  PpoLossStats stats;
  std::vector<double> lp(k), p(k);
  std::fill(dlogits, dlogits + static_cast<long>(batch) * k, 0.0);
  std::fill(dvalues, dvalues + batch, 0.0);
  const double invB = 1.0 / batch;

  for (int b = 0; b < batch; ++b) {
    const int idx = indices[b];
    log_softmax(logits + static_cast<long>(b) * k, k, lp.data());
    for (int j = 0; j < k; ++j) p[j] = std::exp(lp[j]);
    const int a = buffer.actions[idx];
    const double adv = buffer.advantages[idx];
    const double ratio = std::exp(lp[a] - buffer.logp_old[idx]);
    double* dl = dlogits + static_cast<long>(b) * k;

    // Clipped surrogate: loss_b = max(-ratio*adv, -clip(ratio)*adv).
    const double pg1 = -ratio * adv;
    const double clipped = std::clamp(ratio, 1.0 - ppo.clip_coef, 1.0 + ppo.clip_coef);
    const double pg2 = -clipped * adv;
    stats.policy_loss += std::max(pg1, pg2) * invB;
    if (pg1 >= pg2) {
      const double c = -adv * ratio * invB;
      for (int j = 0; j < k; ++j) dl[j] += c * ((j == a ? 1.0 : 0.0) - p[j]);
    }
    if (std::abs(ratio - 1.0) > ppo.clip_coef) stats.clip_fraction += invB;

    // Value loss (no clipping): mean (v - return)^2.
    const double verr = values[b] - buffer.returns[idx];
    stats.value_loss += verr * verr * invB;
    dvalues[b] += ppo.vf_coef * 2.0 * verr * invB;

    // Entropy bonus.
    double H = 0.0;
    for (int j = 0; j < k; ++j) H -= p[j] * lp[j];
    stats.entropy += H * invB;
    for (int j = 0; j < k; ++j) dl[j] += ppo.ent_coef * p[j] * (lp[j] + H) * invB;

    // Forward KL(stored reference || current policy), floored log q.
    const double* ref_lp = buffer.ref_log_probs.data() + static_cast<long>(idx) * k;
    double kl = 0.0, active_mass = 0.0;
    for (int j = 0; j < k; ++j) {
      const double pr = std::exp(ref_lp[j]);
      if (lp[j] > kLogProbFloor) {
        kl += pr * (ref_lp[j] - lp[j]);
        active_mass += pr;
      } else {
        kl += pr * (ref_lp[j] - kLogProbFloor);
      }
    }
    stats.kl += kl * invB;
    const double cb = reward.kl_beta * invB;
    for (int j = 0; j < k; ++j) {
      const double pr_active = (lp[j] > kLogProbFloor) ? std::exp(ref_lp[j]) : 0.0;
      dl[j] += cb * (active_mass * p[j] - pr_active);
    }
  }

  stats.total = stats.policy_loss + ppo.vf_coef * stats.value_loss - ppo.ent_coef * stats.entropy +
                reward.kl_beta * stats.kl;
  return stats;
}

TrainReportRow ppo_update(LateFusionNet& policy, AdamState& adam, RolloutBuffer& buffer,
                          const PpoConfig& ppo, const RewardConfig& reward,
                          std::uint64_t update_seed) {
  const int N = buffer.size();
  const int K = buffer.n_actions;
  ParamSet ps = policy.params();

  TrainReportRow row;
  row.env_steps = N;

  std::vector<int> indices(N);
  std::iota(indices.begin(), indices.end(), 0);

  std::vector<double> mb_obs, logits, values, dlogits, dvalues;
  FusionCache cache;
  double agg_ploss = 0.0, agg_vloss = 0.0, agg_ent = 0.0, agg_clip = 0.0;
  int n_minibatches = 0;

  for (int epoch = 0; epoch < ppo.update_epochs; ++epoch) {
    Rng shuffle_rng(derive_seed(update_seed, 0x73687566ULL, epoch));  // "shuf"
    fisher_yates(indices, shuffle_rng);
    for (int start = 0; start < N; start += ppo.minibatch_size) {
      const int B = std::min(ppo.minibatch_size, N - start);
      mb_obs.resize(static_cast<std::size_t>(B) * buffer.obs_dim);
      for (int b = 0; b < B; ++b) {
        const double* src = buffer.obs.data() + static_cast<long>(indices[start + b]) * buffer.obs_dim;
        std::copy(src, src + buffer.obs_dim, mb_obs.begin() + static_cast<long>(b) * buffer.obs_dim);
      }
      logits.resize(static_cast<std::size_t>(B) * K);
      values.resize(B);
      policy.forward(mb_obs.data(), B, cache, /*train=*/true,
                     derive_seed(update_seed, epoch, start), logits.data(), values.data());

      dlogits.resize(static_cast<std::size_t>(B) * K);
      dvalues.resize(B);
      PpoLossStats stats = ppo_loss_and_grads(logits.data(), values.data(), B, K, buffer,
                                              indices.data() + start, ppo, reward,
                                              dlogits.data(), dvalues.data());
      if (!std::isfinite(stats.total)) {
        std::ostringstream msg;
        msg << "ppo_update: non-finite loss (policy=" << stats.policy_loss
            << " value=" << stats.value_loss << " entropy=" << stats.entropy
            << " kl=" << stats.kl << ") at epoch " << epoch << " offset " << start;
        throw InvariantError(msg.str());
      }
      agg_ploss += stats.policy_loss;
      agg_vloss += stats.value_loss;
      agg_ent += stats.entropy;
      agg_clip += stats.clip_fraction;
      ++n_minibatches;

      ps.zero_grads();
      policy.backward(cache, dlogits.data(), dvalues.data());
      adam_step(ps, adam, ppo.lr, ppo.max_grad_norm);
    }
  }

  double task_sum = 0.0, reward_sum = 0.0, kl_sum = 0.0;
  for (int i = 0; i < N; ++i) {
    task_sum += reward.w_goal * buffer.ev_goal_first[i] - reward.w_collided * buffer.ev_collided[i] -
                reward.w_offroad * buffer.ev_offroad[i];
    reward_sum += buffer.rewards[i];
    kl_sum += buffer.kl_at_collect[i];
  }
  int n_traj = static_cast<int>(buffer.segments.size());
  int coll_traj = 0, off_traj = 0, goal_traj = 0;
  for (const auto& [start, len] : buffer.segments) {
    bool c = false, o = false, g = false;
    for (int t = 0; t < len; ++t) {
      c = c || buffer.ev_collided[start + t];
      o = o || buffer.ev_offroad[start + t];
      g = g || buffer.ev_goal_first[start + t];
    }
    coll_traj += c;
    off_traj += o;
    goal_traj += g;
  }
  row.mean_task_reward = N > 0 ? task_sum / N : 0.0;
  row.mean_reward = N > 0 ? reward_sum / N : 0.0;
  row.mean_kl = N > 0 ? kl_sum / N : 0.0;
  row.entropy = n_minibatches > 0 ? agg_ent / n_minibatches : 0.0;
  row.policy_loss = n_minibatches > 0 ? agg_ploss / n_minibatches : 0.0;
  row.value_loss = n_minibatches > 0 ? agg_vloss / n_minibatches : 0.0;
  row.clip_fraction = n_minibatches > 0 ? agg_clip / n_minibatches : 0.0;
  row.collision_rate = n_traj > 0 ? static_cast<double>(coll_traj) / n_traj : 0.0;
  row.offroad_rate = n_traj > 0 ? static_cast<double>(off_traj) / n_traj : 0.0;
  row.goal_rate = n_traj > 0 ? static_cast<double>(goal_traj) / n_traj : 0.0;
  return row;
}

std::string TrainReport::csv_header() {
  return "update,env_steps,mean_task_reward,mean_reward,mean_kl,entropy,policy_loss,value_loss,"
         "clip_fraction,collision_rate,offroad_rate,goal_rate";
}

void TrainReport::write_csv(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write train report: " + path);
  out << csv_header() << "\n";
  out.precision(17);
  for (const auto& r : rows) {
    out << r.update << ',' << r.env_steps << ',' << r.mean_task_reward << ',' << r.mean_reward
        << ',' << r.mean_kl << ',' << r.entropy << ',' << r.policy_loss << ',' << r.value_loss
        << ',' << r.clip_fraction << ',' << r.collision_rate << ',' << r.offroad_rate << ','
        << r.goal_rate << "\n";
  }
}

std::vector<std::string> list_scenario_files(const std::string& dir) {
  namespace fs = std::filesystem;
  std::vector<std::string> files;
  if (!fs::is_directory(dir)) throw IoError("not a directory: " + dir);
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.is_regular_file() && e.path().extension() == ".json" &&
        e.path().filename() != "config_echo.json") {
      files.push_back(e.path().string());
    }
  }
  std::sort(files.begin(), files.end());
  if (files.empty()) throw IoError("no scenario files in " + dir);
  return files;
}

std::vector<Scenario> load_scenario_dir(const std::string& dir) {
  std::vector<Scenario> scenarios;
  for (const auto& f : list_scenario_files(dir)) scenarios.push_back(load_scenario(f));
  return scenarios;
}

TrainReport train(const TrainRunConfig& cfg, LateFusionNet* out_policy) {
  namespace fs = std::filesystem;
  TokenVocab vocab = load_vocab(cfg.vocab_path);
  LateFusionNet reference = load_net(cfg.ref_checkpoint);
  if (reference.spec().n_actions != vocab.size()) {
    throw ConfigError("train: reference vocabulary size mismatch");
  }
  std::vector<Scenario> scenarios = load_scenario_dir(cfg.scenario_dir);
  fs::create_directories(cfg.out_dir);

  LateFusionNet policy(policy_spec(cfg.sim, vocab.size()), derive_seed(cfg.seed, 0x706f6cULL));
  AdamState adam;
  adam.reset(policy.params().total_size());
  long update = 0;
  long env_steps = 0;

  if (!cfg.resume_from.empty()) {
    long progress = 0;
    policy = load_net(cfg.resume_from, &adam, &progress);
    update = progress;
    std::ifstream st(cfg.resume_from + ".state.json");
    if (st) {
      nlohmann::json js = nlohmann::json::parse(st);
      env_steps = js.value("env_steps", 0L);
    }
  }

  TrainReport report;
  const int W = std::max(1, cfg.ppo.n_parallel_worlds);
  const int N = static_cast<int>(scenarios.size());
  while (env_steps < cfg.ppo.total_env_steps) {
    std::vector<const Scenario*> batch;
    batch.reserve(W);
    for (int w = 0; w < W; ++w) {
      batch.push_back(&scenarios[static_cast<std::size_t>((update * W + w) % N)]);
    }
    RolloutBuffer buf = collect_rollouts(policy, reference, batch, vocab, cfg.sim, cfg.reward,
                                         derive_seed(cfg.seed, 0x636f6cULL, update));
    assemble_rewards(buf, cfg.reward);
    compute_gae(buf, cfg.ppo.gamma, cfg.ppo.gae_lambda, cfg.ppo.norm_adv);
    PpoConfig ppo = cfg.ppo;
    if (cfg.ppo.anneal_lr) {
      double frac = 1.0 - static_cast<double>(env_steps) / cfg.ppo.total_env_steps;
      ppo.lr = cfg.ppo.lr * std::max(0.0, frac);
    }
    TrainReportRow row =
        ppo_update(policy, adam, buf, ppo, cfg.reward, derive_seed(cfg.seed, 0x757064ULL, update));
    env_steps += buf.size();
    update += 1;
    row.update = update;
    row.env_steps = env_steps;
    report.rows.push_back(row);

    if (cfg.checkpoint_every > 0 && update % cfg.checkpoint_every == 0) {
      std::string path = cfg.out_dir + "/checkpoint_" + std::to_string(update) + ".json";
      save_net(policy, path, &adam, cfg.seed, update);
      std::ofstream st(path + ".state.json");
      st << nlohmann::json{{"env_steps", env_steps}, {"update", update}}.dump() << "\n";
    }
  }

  std::string final_path = cfg.out_dir + "/checkpoint_final.json";
  save_net(policy, final_path, &adam, cfg.seed, update);
  {
    std::ofstream st(final_path + ".state.json");
    st << nlohmann::json{{"env_steps", env_steps}, {"update", update}}.dump() << "\n";
  }
  report.write_csv(cfg.out_dir + "/train_report.csv");
  if (out_policy != nullptr) *out_policy = policy;
  return report;
}

}  // namespace tsim
