#include "tsim/app.hpp"

#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "tsim/common.hpp"
#include "tsim/eval.hpp"
#include "tsim/metrics.hpp"
#include "tsim/synthetic.hpp"

namespace tsim {

namespace fs = std::filesystem;
using Json = nlohmann::ordered_json;

namespace {

void require_file(const std::string& path, const std::string& what) {
  if (path.empty()) throw ConfigError(what + " not specified");
  if (!fs::exists(path)) throw ConfigError(what + " not found: " + path);
}

void require_dir(const std::string& path, const std::string& what) {
  if (path.empty()) throw ConfigError(what + " not specified");
  if (!fs::is_directory(path)) throw ConfigError(what + " is not a directory: " + path);
}

void check_keys(const nlohmann::json& j, const std::set<std::string>& allowed,
                const std::string& context) {
  for (const auto& [key, _] : j.items()) {
    if (!allowed.count(key)) {
      throw ConfigError("unknown key '" + key + "' in " + context);
    }
  }
}

// Audit trail: the effective configuration is persisted before execution.
void write_echo(const std::string& out_dir, const Json& j) {
  fs::create_directories(out_dir);
  std::ofstream out(out_dir + "/config_echo.json");
  Json full = j;
  full["version"] = kVersion;
  out << full.dump(1) << "\n";
}

Json sim_to_json(const SimConfig& s) {
  return Json{{"policy_every", s.policy_every},      {"horizon_steps", s.horizon_steps},
              {"remove_on_goal", s.remove_on_goal},  {"freeze_on_done", s.freeze_on_done},
              {"partner_cap", s.partner_cap},        {"road_cap", s.road_cap},
              {"ref_partner_cap", s.ref_partner_cap}, {"obs_radius", s.obs_radius}};
}

SimConfig sim_from_json(const nlohmann::json& j) {
  check_keys(j, {"policy_every", "horizon_steps", "remove_on_goal", "freeze_on_done",
                 "partner_cap", "road_cap", "ref_partner_cap", "obs_radius"},
             "sim config");
  SimConfig s;
  s.policy_every = j.value("policy_every", s.policy_every);
  s.horizon_steps = j.value("horizon_steps", s.horizon_steps);
  s.remove_on_goal = j.value("remove_on_goal", s.remove_on_goal);
  s.freeze_on_done = j.value("freeze_on_done", s.freeze_on_done);
  s.partner_cap = j.value("partner_cap", s.partner_cap);
  s.road_cap = j.value("road_cap", s.road_cap);
  s.ref_partner_cap = j.value("ref_partner_cap", s.ref_partner_cap);
  s.obs_radius = j.value("obs_radius", s.obs_radius);
  return s;
}

}  // namespace

void cmd_gen_data(const GenDataConfig& cfg) {
  if (cfg.count < 1) throw ConfigError("gen-data: --n must be >= 1");
  if (cfg.out_dir.empty()) throw ConfigError("gen-data: --out not specified");
  set_max_workers(cfg.workers);
  write_echo(cfg.out_dir, Json{{"command", "gen-data"},
                               {"template", cfg.tmpl},
                               {"n", cfg.count},
                               {"agents", cfg.agents},
                               {"seed", cfg.seed}});
  const std::vector<ScenarioTemplate> rotation = {
      ScenarioTemplate::straight, ScenarioTemplate::curve, ScenarioTemplate::intersection};
  for (int i = 0; i < cfg.count; ++i) {
    ScenarioTemplate t =
        cfg.tmpl == "mixed" ? rotation[i % rotation.size()] : parse_template(cfg.tmpl);
    int agents = cfg.agents > 0
                     ? cfg.agents
                     : 3 + static_cast<int>(derive_seed(cfg.seed, 0x6167ULL, i) % 6);  // 3..8
    Scenario s = generate_synthetic_scenario(t, agents, derive_seed(cfg.seed, 0x7363ULL, i));
    char name[64];
    std::snprintf(name, sizeof(name), "scenario_%04d", i);
    s.id = std::string(template_name(t)) + "_" + name;
    save_scenario(s, cfg.out_dir + "/" + name + ".json");
  }
}

namespace {

std::vector<MotionSegment> collect_segments(const std::vector<Scenario>& scenarios, int horizon) {
  std::vector<MotionSegment> segments;
  for (const auto& s : scenarios) {
    for (int a = 0; a < s.num_agents(); ++a) {
      if (!s.controlled[a]) continue;
      const auto& tr = s.tracks[a];
      for (int t = s.init_step; t + horizon < static_cast<int>(tr.states.size()); t += horizon) {
        bool ok = true;
        for (int h = 0; h <= horizon; ++h) ok = ok && tr.states[t + h].valid;
        if (ok) segments.push_back(segment_from_track(tr, t, horizon));
      }
    }
  }
  return segments;
}

}  // namespace

void cmd_fit_vocab(const FitVocabConfig& cfg) {
  require_dir(cfg.scenario_dir, "--scenarios");
  if (cfg.out_path.empty()) throw ConfigError("fit-vocab: --out not specified");
  set_max_workers(cfg.workers);
  std::vector<Scenario> scenarios = load_scenario_dir(cfg.scenario_dir);
  std::vector<MotionSegment> segments = collect_segments(scenarios, 2);
  if (segments.empty()) throw InvariantError("fit-vocab: no usable motion segments");
  KdiskFit fit = cfg.radius > 0.0 ? fit_kdisk(segments, cfg.radius, cfg.k, cfg.seed)
                                  : fit_kdisk_auto(segments, cfg.k, cfg.seed);
  save_vocab(fit.vocab, cfg.out_path);
  std::cout << "vocab: K=" << fit.vocab.size() << " radius=" << fit.vocab.radius
            << " coverage=" << fit.coverage << " segments=" << segments.size() << "\n";
}

void cmd_train_ref(const TrainRefConfig& cfg) {
  require_dir(cfg.scenario_dir, "--scenarios");
  require_file(cfg.vocab_path, "--vocab");
  if (cfg.out_dir.empty()) throw ConfigError("train-ref: --out not specified");
  set_max_workers(cfg.workers);
  TokenVocab vocab = load_vocab(cfg.vocab_path);
  std::vector<Scenario> scenarios = load_scenario_dir(cfg.scenario_dir);
  write_echo(cfg.out_dir, Json{{"command", "train-ref"},
                               {"scenarios", cfg.scenario_dir},
                               {"vocab", cfg.vocab_path},
                               {"epochs", cfg.epochs},
                               {"lr", cfg.lr},
                               {"val_fraction", cfg.val_fraction},
                               {"decentralized", cfg.decentralized},
                               {"seed", cfg.seed},
                               {"sim", sim_to_json(cfg.sim)}});
  BcDataset ds = build_bc_dataset(scenarios, vocab, cfg.sim, cfg.decentralized, cfg.val_fraction,
                                  cfg.seed);
  LateFusionNet ref(reference_spec(cfg.sim, vocab.size(), cfg.decentralized),
                    derive_seed(cfg.seed, 0x726566ULL));
  BcReport report = bc_train(ref, ds, cfg.epochs, cfg.lr, cfg.seed);
  report.write_csv(cfg.out_dir + "/bc_report.csv");
  save_net(ref, cfg.out_dir + "/ref.json", nullptr, cfg.seed, cfg.epochs);
  std::cout << "bc: pairs=" << ds.contexts.size() << " val_nll=" << report.final_val_nll()
            << " val_acc=" << report.final_val_acc() << "\n";
}

TrainRunConfig load_train_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open train config: " + path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed train config: ") + e.what());
  }
  check_keys(j,
             {"scenario_dir", "vocab", "reference", "out_dir", "seed", "total_env_steps",
              "n_parallel_worlds", "minibatch_size", "checkpoint_every", "reward", "ppo", "sim"},
             "train config");
  TrainRunConfig cfg;
  cfg.scenario_dir = j.value("scenario_dir", "");
  cfg.vocab_path = j.value("vocab", "");
  cfg.ref_checkpoint = j.value("reference", "");
  cfg.out_dir = j.value("out_dir", "");
  cfg.seed = j.value("seed", 0ULL);
  cfg.ppo.total_env_steps = j.value("total_env_steps", cfg.ppo.total_env_steps);
  cfg.ppo.n_parallel_worlds = j.value("n_parallel_worlds", cfg.ppo.n_parallel_worlds);
  cfg.ppo.minibatch_size = j.value("minibatch_size", cfg.ppo.minibatch_size);
  cfg.checkpoint_every = j.value("checkpoint_every", 0L);
  if (j.contains("reward")) {
    const auto& r = j["reward"];
    check_keys(r, {"w_goal", "w_collided", "w_offroad", "w_humanlike", "kl_beta", "goal_dropout_p"},
               "reward config");
    cfg.reward.w_goal = r.value("w_goal", cfg.reward.w_goal);
    cfg.reward.w_collided = r.value("w_collided", cfg.reward.w_collided);
    cfg.reward.w_offroad = r.value("w_offroad", cfg.reward.w_offroad);
    cfg.reward.w_humanlike = r.value("w_humanlike", cfg.reward.w_humanlike);
    cfg.reward.kl_beta = r.value("kl_beta", cfg.reward.kl_beta);
    cfg.reward.goal_dropout_p = r.value("goal_dropout_p", cfg.reward.goal_dropout_p);
  }
  if (j.contains("ppo")) {
    const auto& p = j["ppo"];
    check_keys(p,
               {"gamma", "gae_lambda", "clip_coef", "update_epochs", "ent_coef", "vf_coef",
                "max_grad_norm", "lr", "norm_adv", "anneal_lr"},
               "ppo config");
    cfg.ppo.gamma = p.value("gamma", cfg.ppo.gamma);
    cfg.ppo.gae_lambda = p.value("gae_lambda", cfg.ppo.gae_lambda);
    cfg.ppo.clip_coef = p.value("clip_coef", cfg.ppo.clip_coef);
    cfg.ppo.update_epochs = p.value("update_epochs", cfg.ppo.update_epochs);
    cfg.ppo.ent_coef = p.value("ent_coef", cfg.ppo.ent_coef);
    cfg.ppo.vf_coef = p.value("vf_coef", cfg.ppo.vf_coef);
    cfg.ppo.max_grad_norm = p.value("max_grad_norm", cfg.ppo.max_grad_norm);
    cfg.ppo.lr = p.value("lr", cfg.ppo.lr);
    cfg.ppo.norm_adv = p.value("norm_adv", cfg.ppo.norm_adv);
    cfg.ppo.anneal_lr = p.value("anneal_lr", cfg.ppo.anneal_lr);
  }
  if (j.contains("sim")) cfg.sim = sim_from_json(j["sim"]);
  return cfg;
}

namespace {

void run_train(const TrainRunConfig& cfg) {
  require_dir(cfg.scenario_dir, "scenario_dir");
  require_file(cfg.vocab_path, "vocab");
  require_file(cfg.ref_checkpoint, "reference checkpoint");
  if (cfg.out_dir.empty()) throw ConfigError("train: out_dir not specified");
  Json echo{{"command", "train"},
            {"scenario_dir", cfg.scenario_dir},
            {"vocab", cfg.vocab_path},
            {"reference", cfg.ref_checkpoint},
            {"seed", cfg.seed},
            {"total_env_steps", cfg.ppo.total_env_steps},
            {"n_parallel_worlds", cfg.ppo.n_parallel_worlds},
            {"minibatch_size", cfg.ppo.minibatch_size},
            {"checkpoint_every", cfg.checkpoint_every},
            {"resume_from", cfg.resume_from},
            {"reward",
             Json{{"w_goal", cfg.reward.w_goal},
                  {"w_collided", cfg.reward.w_collided},
                  {"w_offroad", cfg.reward.w_offroad},
                  {"w_humanlike", cfg.reward.w_humanlike},
                  {"kl_beta", cfg.reward.kl_beta},
                  {"goal_dropout_p", cfg.reward.goal_dropout_p}}},
            {"ppo",
             Json{{"gamma", cfg.ppo.gamma},
                  {"gae_lambda", cfg.ppo.gae_lambda},
                  {"clip_coef", cfg.ppo.clip_coef},
                  {"update_epochs", cfg.ppo.update_epochs},
                  {"ent_coef", cfg.ppo.ent_coef},
                  {"vf_coef", cfg.ppo.vf_coef},
                  {"max_grad_norm", cfg.ppo.max_grad_norm},
                  {"lr", cfg.ppo.lr},
                  {"norm_adv", cfg.ppo.norm_adv},
                  {"anneal_lr", cfg.ppo.anneal_lr}}},
            {"sim", sim_to_json(cfg.sim)}};
  write_echo(cfg.out_dir, echo);
  TrainReport report = train(cfg);
  std::cout << "train: updates=" << report.rows.size();
  if (!report.rows.empty()) {
    std::cout << " env_steps=" << report.rows.back().env_steps
              << " mean_kl=" << report.rows.back().mean_kl;
  }
  std::cout << "\n";
}

}  // namespace

void cmd_eval_realism(const EvalRealismConfig& cfg) {
  require_dir(cfg.scenario_dir, "--scenarios");
  require_file(cfg.vocab_path, "--vocab");
  require_file(cfg.checkpoint, "--checkpoint");
  if (cfg.out_dir.empty()) throw ConfigError("eval-realism: --out not specified");
  if (cfg.samples < 2) throw ConfigError("eval-realism: --samples must be >= 2");
  set_max_workers(cfg.workers);
  TokenVocab vocab = load_vocab(cfg.vocab_path);
  LateFusionNet net = load_net(cfg.checkpoint);
  std::vector<Scenario> scenarios = load_scenario_dir(cfg.scenario_dir);
  write_echo(cfg.out_dir, Json{{"command", "eval-realism"},
                               {"scenarios", cfg.scenario_dir},
                               {"vocab", cfg.vocab_path},
                               {"checkpoint", cfg.checkpoint},
                               {"samples", cfg.samples},
                               {"argmax", cfg.argmax},
                               {"seed", cfg.seed},
                               {"sim", sim_to_json(cfg.sim)}});

  auto specs = default_feature_specs();
  std::ofstream summary(cfg.out_dir + "/realism_summary.csv");
  summary << "scenario_id,composite,kinematic,interactive,map,min_ade,collision_rate,offroad_rate,"
             "goal_rate\n";
  summary.precision(17);
  double comp_sum = 0.0, ade_sum = 0.0;
  for (std::size_t i = 0; i < scenarios.size(); ++i) {
    std::vector<std::uint64_t> seeds;
    for (int s = 0; s < cfg.samples; ++s) seeds.push_back(derive_seed(cfg.seed, 0x726561ULL, i, s));
    ControllerRef ctrl{&net, cfg.argmax};
    RolloutSet set = simulate_rollout_set(ctrl, scenarios[i], vocab, cfg.sim, seeds);
    RealismReport rep = realism_score(set, scenarios[i], specs);
    rep.write_csv(scenarios[i].id, cfg.out_dir + "/realism_" + scenarios[i].id + ".csv");
    std::ofstream detail(cfg.out_dir + "/realism_" + scenarios[i].id + ".json");
    detail << rep.to_json(scenarios[i].id) << "\n";
    summary << scenarios[i].id << ',' << rep.composite << ',' << rep.kinematic << ','
            << rep.interactive << ',' << rep.map << ',' << rep.min_ade << ','
            << rep.collision_rate << ',' << rep.offroad_rate << ',' << rep.goal_rate << "\n";
    comp_sum += rep.composite;
    ade_sum += rep.min_ade;
  }
  std::cout << "realism: scenarios=" << scenarios.size()
            << " mean_composite=" << comp_sum / scenarios.size()
            << " mean_min_ade=" << ade_sum / scenarios.size() << "\n";
}

void cmd_eval_planners(const EvalPlannersConfig& cfg) {
  require_dir(cfg.scenario_dir, "--scenarios");
  require_file(cfg.vocab_path, "--vocab");
  bool needs_ref = false, needs_pol = false;
  for (const auto& s : cfg.strategies) {
    if (s == "reference_rollout") needs_ref = true;
    else if (s == "policy_rollout") needs_pol = true;
    else if (s != "log_replay") throw ConfigError("unknown strategy: " + s);
  }
  if (needs_ref) require_file(cfg.reference_checkpoint, "--reference");
  if (needs_pol) require_file(cfg.background_policy, "--policy");
  for (const auto& p : cfg.planner_policies) require_file(p, "planner checkpoint");
  if (!cfg.presets_path.empty()) require_file(cfg.presets_path, "--presets");
  if (cfg.out_dir.empty()) throw ConfigError("eval-planners: --out not specified");
  set_max_workers(cfg.workers);

  TokenVocab vocab = load_vocab(cfg.vocab_path);
  std::vector<Scenario> scenarios = load_scenario_dir(cfg.scenario_dir);
  PlannerPresets presets =
      cfg.presets_path.empty() ? builtin_planner_presets() : load_planner_presets(cfg.presets_path);

  LateFusionNet ref_net, pol_net;
  if (needs_ref) ref_net = load_net(cfg.reference_checkpoint);
  if (needs_pol) pol_net = load_net(cfg.background_policy);
  std::vector<LateFusionNet> planner_nets;
  planner_nets.reserve(cfg.planner_policies.size());
  for (const auto& p : cfg.planner_policies) planner_nets.push_back(load_net(p));

  write_echo(cfg.out_dir, Json{{"command", "eval-planners"},
                               {"scenarios", cfg.scenario_dir},
                               {"vocab", cfg.vocab_path},
                               {"reference", cfg.reference_checkpoint},
                               {"policy", cfg.background_policy},
                               {"planner_policies", cfg.planner_policies},
                               {"presets", cfg.presets_path},
                               {"strategies", cfg.strategies},
                               {"seed", cfg.seed},
                               {"sim", sim_to_json(cfg.sim)}});

  std::vector<PlannerVariant> planners;
  for (const auto& p : presets.idm) {
    PlannerVariant v;
    v.kind = PlannerVariant::Kind::idm;
    v.name = p.name;
    v.idm = p.params;
    planners.push_back(std::move(v));
  }
  for (const auto& p : presets.frenet) {
    PlannerVariant v;
    v.kind = PlannerVariant::Kind::frenet;
    v.name = p.name;
    v.frenet = p.params;
    planners.push_back(std::move(v));
  }
  for (std::size_t i = 0; i < planner_nets.size(); ++i) {
    PlannerVariant v;
    v.kind = PlannerVariant::Kind::policy;
    v.name = "policy:" + fs::path(cfg.planner_policies[i]).stem().string();
    v.policy = &planner_nets[i];
    planners.push_back(std::move(v));
  }

  std::vector<EvalStrategy> strategies;
  for (const auto& s : cfg.strategies) {
    EvalStrategy st;
    st.name = s;
    if (s == "log_replay") {
      st.tag = StrategyTag::log_replay;
    } else if (s == "reference_rollout") {
      st.tag = StrategyTag::reference_rollout;
      st.controller = &ref_net;
    } else {
      st.tag = StrategyTag::policy_rollout;
      st.controller = &pol_net;
    }
    strategies.push_back(st);
  }

  PdmWeights weights;
  ScoreMatrix matrix =
      planner_eval_matrix(planners, scenarios, strategies, vocab, cfg.sim, weights, cfg.seed);
  matrix.write_csv(cfg.out_dir + "/score_matrix.csv");
  for (std::size_t a = 0; a < strategies.size(); ++a) {
    for (std::size_t b = a + 1; b < strategies.size(); ++b) {
      try {
        CorrelationResult corr =
            correlation_stats(matrix, static_cast<int>(a), static_cast<int>(b));
        corr.write_csv(cfg.out_dir + "/correlation_" + strategies[a].name + "_" +
                           strategies[b].name + ".csv",
                       strategies[a].name, strategies[b].name);
      } catch (const InvariantError& e) {
        std::cerr << "correlation skipped (" << strategies[a].name << " vs "
                  << strategies[b].name << "): " << e.what() << "\n";
      }
    }
  }
  std::cout << "planner matrix: " << planners.size() << " planners x " << strategies.size()
            << " strategies x " << scenarios.size() << " scenarios, complete="
            << (matrix.all_cells_present() ? "yes" : "no") << "\n";
}

void cmd_bench(const BenchConfig& cfg) {
  require_dir(cfg.scenario_dir, "--scenarios");
  require_file(cfg.vocab_path, "--vocab");
  require_file(cfg.policy_checkpoint, "--policy");
  require_file(cfg.reference_checkpoint, "--reference");
  if (cfg.out_dir.empty()) throw ConfigError("bench: --out not specified");
  if (cfg.n_seeds < 3) throw ConfigError("bench: --seeds must be >= 3");
  set_max_workers(cfg.workers);

  TokenVocab vocab = load_vocab(cfg.vocab_path);
  LateFusionNet policy = load_net(cfg.policy_checkpoint);
  LateFusionNet reference = load_net(cfg.reference_checkpoint);
  std::vector<Scenario> scenarios = load_scenario_dir(cfg.scenario_dir);
  write_echo(cfg.out_dir, Json{{"command", "bench"},
                               {"scenarios", cfg.scenario_dir},
                               {"vocab", cfg.vocab_path},
                               {"policy", cfg.policy_checkpoint},
                               {"reference", cfg.reference_checkpoint},
                               {"worlds", cfg.n_worlds},
                               {"episodes_per_world", cfg.episodes_per_world},
                               {"n_seeds", cfg.n_seeds},
                               {"seed", cfg.seed},
                               {"sim", sim_to_json(cfg.sim)}});

  std::vector<std::uint64_t> seeds;
  for (int i = 0; i < cfg.n_seeds; ++i) seeds.push_back(derive_seed(cfg.seed, 0x62656eULL, i));
  BenchResult pol = throughput_bench(ControllerRef{&policy, false}, "policy", scenarios, vocab,
                                     cfg.sim, cfg.n_worlds, cfg.episodes_per_world, seeds);
  BenchResult ref = throughput_bench(ControllerRef{&reference, false}, "reference", scenarios,
                                     vocab, cfg.sim, cfg.n_worlds, cfg.episodes_per_world, seeds);
  double ratio = ref.scenarios_per_sec_mean > 0.0
                     ? pol.scenarios_per_sec_mean / ref.scenarios_per_sec_mean
                     : 0.0;
  Json j;
  j["schema_version"] = 1;
  j["policy"] = Json::parse(pol.to_json());
  j["reference"] = Json::parse(ref.to_json());
  j["policy_over_reference_ratio"] = ratio;
  std::ofstream out(cfg.out_dir + "/bench.json");
  out << j.dump(1) << "\n";
  std::cout << "bench: policy=" << pol.scenarios_per_sec_mean << "±" << pol.scenarios_per_sec_std
            << " scen/s, reference=" << ref.scenarios_per_sec_mean << "±"
            << ref.scenarios_per_sec_std << " scen/s, ratio=" << ratio << "\n";
}

void cmd_rollout_dump(const RolloutDumpConfig& cfg) {
  require_file(cfg.scenario_path, "--scenario");
  require_file(cfg.vocab_path, "--vocab");
  require_file(cfg.checkpoint, "--checkpoint");
  if (cfg.out_path.empty()) throw ConfigError("rollout-dump: --out not specified");
  set_max_workers(cfg.workers);

  Scenario scenario = load_scenario(cfg.scenario_path);
  TokenVocab vocab = load_vocab(cfg.vocab_path);
  LateFusionNet net = load_net(cfg.checkpoint);
  const int K = net.spec().n_actions;
  if (K != vocab.size()) throw ConfigError("rollout-dump: checkpoint/vocab mismatch");

  WorldState world = reset(scenario, cfg.sim);
  RolloutDump dump;
  FusionCache cache;
  std::vector<double> lp(K);
  std::vector<SubstepSnapshot> trace;
  int policy_step = 0;
  while (!episode_over(world, scenario)) {
    JointActions actions;
    actions.tokens.assign(scenario.num_agents(), -1);
    Rng rng(derive_seed(cfg.seed, 0x64756dULL, policy_step));
    for (int i = 0; i < scenario.num_agents(); ++i) {
      if (!scenario.controlled[i] || !world.agent_present(i) || world.done[i]) continue;
      std::vector<double> feats =
          net.spec().input_is_context
              ? build_global_context(world, i, scenario, cfg.sim).features
              : build_observation(world, i, scenario, cfg.sim, false).features;
      CategoricalDist d = net.dist(feats);
      actions.tokens[i] = d.sample(rng);
    }
    trace.clear();
    step(world, actions, vocab, scenario, cfg.sim, &trace);
    for (const auto& snap : trace) dump.record(scenario.id, snap);
    ++policy_step;
  }
  dump.write(cfg.out_path);
  std::cout << "rollout-dump: " << dump.rows.size() << " rows -> " << cfg.out_path << "\n";
}

namespace {

void add_sim_flags(CLI::App* cmd, SimConfig* sim) {
  cmd->add_option("--policy-every", sim->policy_every, "sim steps per policy step");
  cmd->add_option("--partner-cap", sim->partner_cap, "observation partner slots");
  cmd->add_option("--road-cap", sim->road_cap, "observation roadgraph slots");
  cmd->add_option("--ref-partner-cap", sim->ref_partner_cap, "context partner slots");
  cmd->add_flag("--remove-on-goal", sim->remove_on_goal, "remove agents at goal");
}

}  // namespace

int run_cli(int argc, const char* const* argv) {
  CLI::App app{"tokenized traffic self-play: simulation, training, evaluation"};
  app.require_subcommand(1);

  GenDataConfig gen;
  auto* c_gen = app.add_subcommand("gen-data", "generate synthetic expert scenarios");
  c_gen->add_option("--template", gen.tmpl, "straight|curve|intersection|mixed");
  c_gen->add_option("--n", gen.count, "number of scenarios")->required();
  c_gen->add_option("--agents", gen.agents, "agents per scenario (0 = varied)");
  c_gen->add_option("--seed", gen.seed, "global seed");
  c_gen->add_option("--out", gen.out_dir, "output directory")->required();
  c_gen->add_option("--workers", gen.workers, "max worker threads (0 = auto)");

  FitVocabConfig fit;
  auto* c_fit = app.add_subcommand("fit-vocab", "fit the K-disk token vocabulary");
  c_fit->add_option("--scenarios", fit.scenario_dir)->required();
  c_fit->add_option("--k", fit.k, "target vocabulary size");
  c_fit->add_option("--radius", fit.radius, "fixed radius (0 = bisect to K)");
  c_fit->add_option("--seed", fit.seed);
  c_fit->add_option("--out", fit.out_path)->required();
  c_fit->add_option("--workers", fit.workers);

  TrainRefConfig tref;
  auto* c_tref = app.add_subcommand("train-ref", "behavior-clone the reference model");
  c_tref->add_option("--scenarios", tref.scenario_dir)->required();
  c_tref->add_option("--vocab", tref.vocab_path)->required();
  c_tref->add_option("--out", tref.out_dir)->required();
  c_tref->add_option("--epochs", tref.epochs);
  c_tref->add_option("--lr", tref.lr);
  c_tref->add_option("--val-fraction", tref.val_fraction);
  c_tref->add_flag("--decentralized", tref.decentralized,
                   "local-observation reference (HR-PPO style)");
  c_tref->add_option("--seed", tref.seed);
  c_tref->add_option("--workers", tref.workers);
  add_sim_flags(c_tref, &tref.sim);

  std::string train_config_path, train_resume;
  TrainRunConfig traincfg;
  bool train_seed_set = false, train_steps_set = false;
  std::uint64_t train_seed = 0;
  long train_steps = 0;
  int train_workers = 0;
  std::string train_scenarios, train_vocab, train_ref_path, train_out;
  auto* c_train = app.add_subcommand("train", "self-play PPO with reference anchoring");
  c_train->add_option("--config", train_config_path, "train config JSON");
  c_train->add_option("--scenarios", train_scenarios);
  c_train->add_option("--vocab", train_vocab);
  c_train->add_option("--reference", train_ref_path);
  c_train->add_option("--out", train_out);
  c_train->add_option("--resume", train_resume, "checkpoint to resume from");
  c_train->add_option_function<std::uint64_t>(
      "--seed", [&](const std::uint64_t& v) { train_seed = v; train_seed_set = true; });
  c_train->add_option_function<long>(
      "--total-steps", [&](const long& v) { train_steps = v; train_steps_set = true; });
  c_train->add_option("--workers", train_workers);

  EvalRealismConfig realism;
  auto* c_real = app.add_subcommand("eval-realism", "distributional realism metrics");
  c_real->add_option("--scenarios", realism.scenario_dir)->required();
  c_real->add_option("--vocab", realism.vocab_path)->required();
  c_real->add_option("--checkpoint", realism.checkpoint)->required();
  c_real->add_option("--out", realism.out_dir)->required();
  c_real->add_option("--samples", realism.samples);
  c_real->add_flag("--argmax", realism.argmax, "deterministic rollouts");
  c_real->add_option("--seed", realism.seed);
  c_real->add_option("--workers", realism.workers);
  add_sim_flags(c_real, &realism.sim);

  EvalPlannersConfig planners;
  auto* c_plan = app.add_subcommand("eval-planners", "closed-loop planner evaluation matrix");
  c_plan->add_option("--scenarios", planners.scenario_dir)->required();
  c_plan->add_option("--vocab", planners.vocab_path)->required();
  c_plan->add_option("--reference", planners.reference_checkpoint);
  c_plan->add_option("--policy", planners.background_policy);
  c_plan->add_option("--planner-policies", planners.planner_policies)->delimiter(',');
  c_plan->add_option("--presets", planners.presets_path);
  c_plan->add_option("--strategies", planners.strategies)->delimiter(',');
  c_plan->add_option("--out", planners.out_dir)->required();
  c_plan->add_option("--seed", planners.seed);
  c_plan->add_option("--workers", planners.workers);
  add_sim_flags(c_plan, &planners.sim);

  BenchConfig bench;
  auto* c_bench = app.add_subcommand("bench", "closed-loop throughput benchmark");
  c_bench->add_option("--scenarios", bench.scenario_dir)->required();
  c_bench->add_option("--vocab", bench.vocab_path)->required();
  c_bench->add_option("--policy", bench.policy_checkpoint)->required();
  c_bench->add_option("--reference", bench.reference_checkpoint)->required();
  c_bench->add_option("--worlds", bench.n_worlds);
  c_bench->add_option("--episodes-per-world", bench.episodes_per_world);
  c_bench->add_option("--seeds", bench.n_seeds);
  c_bench->add_option("--seed", bench.seed);
  c_bench->add_option("--out", bench.out_dir)->required();
  c_bench->add_option("--workers", bench.workers);
  add_sim_flags(c_bench, &bench.sim);

  RolloutDumpConfig dump;
  auto* c_dump = app.add_subcommand("rollout-dump", "per-step CSV of one rollout");
  c_dump->add_option("--scenario", dump.scenario_path)->required();
  c_dump->add_option("--vocab", dump.vocab_path)->required();
  c_dump->add_option("--checkpoint", dump.checkpoint)->required();
  c_dump->add_option("--out", dump.out_path)->required();
  c_dump->add_option("--seed", dump.seed);
  c_dump->add_option("--workers", dump.workers);
  add_sim_flags(c_dump, &dump.sim);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (c_gen->parsed()) {
      cmd_gen_data(gen);
    } else if (c_fit->parsed()) {
      cmd_fit_vocab(fit);
    } else if (c_tref->parsed()) {
      cmd_train_ref(tref);
    } else if (c_train->parsed()) {
      TrainRunConfig cfg = train_config_path.empty() ? TrainRunConfig{}
                                                     : load_train_config(train_config_path);
      if (!train_scenarios.empty()) cfg.scenario_dir = train_scenarios;
      if (!train_vocab.empty()) cfg.vocab_path = train_vocab;
      if (!train_ref_path.empty()) cfg.ref_checkpoint = train_ref_path;
      if (!train_out.empty()) cfg.out_dir = train_out;
      if (!train_resume.empty()) cfg.resume_from = train_resume;
      if (train_seed_set) cfg.seed = train_seed;
      if (train_steps_set) cfg.ppo.total_env_steps = train_steps;
      set_max_workers(train_workers);
      run_train(cfg);
    } else if (c_real->parsed()) {
      cmd_eval_realism(realism);
    } else if (c_plan->parsed()) {
      cmd_eval_planners(planners);
    } else if (c_bench->parsed()) {
      cmd_bench(bench);
    } else if (c_dump->parsed()) {
      cmd_rollout_dump(dump);
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitOk;
}

}  // namespace tsim
