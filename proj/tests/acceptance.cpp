// Acceptance suite: one pass/fail line per criterion. Heavy artifacts
// (scenario corpora, vocabulary, reference model, trained policies) are
// built once under the work directory and reused.
//
//   acceptance [--only N] [--work DIR]

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "tsim/app.hpp"
#include "tsim/common.hpp"
#include "tsim/eval.hpp"
#include "tsim/metrics.hpp"
#include "tsim/planners.hpp"
#include "tsim/synthetic.hpp"
#include "tsim/trainer.hpp"

using namespace tsim;
namespace fs = std::filesystem;

namespace {

struct CheckContext {
  int failures = 0;
  std::vector<std::string> notes;

  void expect(bool ok, const std::string& what) {
    if (!ok) {
      ++failures;
      notes.push_back(what);
    }
  }
};

double now_s() {
  return std::chrono::duration<double>(std::chrono::steady_clock::now().time_since_epoch())
      .count();
}

// ---------------------------------------------------------------------------
// Shared workspace

struct Workspace {
  fs::path root;
  SimConfig sim;          // acceptance-scale feature caps
  TokenVocab vocab;
  LateFusionNet reference;
  double bc_val_acc = 0.0;
  double bc_val_nll = 0.0;
  std::vector<Scenario> train_scen;
  std::vector<Scenario> heldout_scen;

  fs::path vocab_path() const { return root / "vocab.json"; }
  fs::path ref_path() const { return root / "ref.json"; }
  fs::path train_dir() const { return root / "train_scen"; }
  fs::path heldout_dir() const { return root / "heldout_scen"; }
  fs::path smoke_dir() const { return root / "smoke_scen"; }
};

constexpr std::uint64_t kSeed = 42;
constexpr int kTrainScenarios = 50;
constexpr int kHeldoutScenarios = 20;
constexpr long kPairedBudget = 400000;  // env steps per training arm (6, 7)
constexpr long kKlBudgetCap = 2000000;  // criterion 6 upper bound

SimConfig acceptance_sim() {
  SimConfig cfg;
  cfg.partner_cap = 8;
  cfg.ref_partner_cap = 16;
  cfg.road_cap = 32;
  return cfg;
}

void generate_corpus(const fs::path& dir, int count, std::uint64_t seed_base) {
  fs::create_directories(dir);
  const ScenarioTemplate rotation[3] = {ScenarioTemplate::straight, ScenarioTemplate::curve,
                                        ScenarioTemplate::intersection};
  for (int i = 0; i < count; ++i) {
    int agents = 3 + static_cast<int>(derive_seed(seed_base, 0x6167ULL, i) % 6);
    Scenario s = generate_synthetic_scenario(rotation[i % 3], agents,
                                             derive_seed(seed_base, 0x7363ULL, i));
    char name[64];
    std::snprintf(name, sizeof(name), "scenario_%04d", i);
    s.id = std::string(template_name(rotation[i % 3])) + "_" + name;
    save_scenario(s, (dir / (std::string(name) + ".json")).string());
  }
}

std::vector<MotionSegment> corpus_segments(const std::vector<Scenario>& scenarios) {
  std::vector<MotionSegment> segments;
  for (const auto& s : scenarios) {
    for (int a = 0; a < s.num_agents(); ++a) {
      if (!s.controlled[a]) continue;
      for (int t = s.init_step; t + 2 < s.total_steps(); t += 2) {
        bool ok = true;
        for (int h = 0; h <= 2; ++h) ok = ok && s.tracks[a].states[t + h].valid;
        if (ok) segments.push_back(segment_from_track(s.tracks[a], t, 2));
      }
    }
  }
  return segments;
}

Workspace build_workspace(const fs::path& root) {
  Workspace ws;
  ws.root = root;
  ws.sim = acceptance_sim();
  fs::create_directories(root);

  if (!fs::exists(ws.train_dir() / "scenario_0000.json")) {
    std::printf("  [setup] generating %d training scenarios...\n", kTrainScenarios);
    generate_corpus(ws.train_dir(), kTrainScenarios, 1000);
  }
  if (!fs::exists(ws.heldout_dir() / "scenario_0000.json")) {
    std::printf("  [setup] generating %d held-out scenarios...\n", kHeldoutScenarios);
    generate_corpus(ws.heldout_dir(), kHeldoutScenarios, 2000);
  }
  ws.train_scen = load_scenario_dir(ws.train_dir().string());
  ws.heldout_scen = load_scenario_dir(ws.heldout_dir().string());

  if (!fs::exists(ws.smoke_dir() / "scenario_0000.json")) {
    generate_corpus(ws.smoke_dir(), 4, 3000);
  }

  if (fs::exists(ws.vocab_path())) {
    ws.vocab = load_vocab(ws.vocab_path().string());
  } else {
    std::printf("  [setup] fitting the K-disk vocabulary (K = 64)...\n");
    KdiskFit fit = fit_kdisk_auto(corpus_segments(ws.train_scen), 64, derive_seed(kSeed, 11));
    ws.vocab = fit.vocab;
    save_vocab(ws.vocab, ws.vocab_path().string());
    std::printf("  [setup] vocab: K=%d radius=%.5f coverage=%.4f\n", ws.vocab.size(),
                ws.vocab.radius, fit.coverage);
  }

  fs::path bc_csv = ws.root / "bc_report.csv";
  if (fs::exists(ws.ref_path())) {
    ws.reference = load_net(ws.ref_path().string());
    std::ifstream in(bc_csv);
    std::string line, last;
    std::getline(in, line);  // header
    while (std::getline(in, line)) {
      if (!line.empty()) last = line;
    }
    std::sscanf(last.c_str(), "%*d,%*lf,%lf,%lf", &ws.bc_val_nll, &ws.bc_val_acc);
  } else {
    std::printf("  [setup] behavior cloning the centralized reference (30 epochs)...\n");
    BcDataset ds = build_bc_dataset(ws.train_scen, ws.vocab, ws.sim, false, 0.1,
                                    derive_seed(kSeed, 12));
    std::printf("  [setup] BC dataset: %zu pairs, dim %d\n", ds.contexts.size(), ds.feature_dim);
    ws.reference = LateFusionNet(reference_spec(ws.sim, ws.vocab.size(), false),
                                 derive_seed(kSeed, 13));
    BcReport rep = bc_train(ws.reference, ds, 30, 2e-3, derive_seed(kSeed, 14));
    rep.write_csv(bc_csv.string());
    ws.bc_val_nll = rep.final_val_nll();
    ws.bc_val_acc = rep.final_val_acc();
    save_net(ws.reference, ws.ref_path().string(), nullptr, kSeed, 30);
    std::printf("  [setup] BC reference: val_nll=%.4f val_acc=%.4f\n", ws.bc_val_nll,
                ws.bc_val_acc);
  }
  return ws;
}

// One PPO training arm with per-update KL tracking; shared by criteria 6/7.
struct TrainArm {
  std::vector<TrainReportRow> rows;
  fs::path checkpoint;
};

TrainArm run_arm(Workspace& ws, const std::string& name, const RewardConfig& reward, long budget,
                 std::uint64_t seed, double* first_kl = nullptr, double* best_window = nullptr,
                 long* steps_at_converge = nullptr) {
  TrainArm arm;
  arm.checkpoint = ws.root / (name + ".json");
  fs::path report_path = ws.root / (name + "_report.csv");
  if (fs::exists(arm.checkpoint) && fs::exists(report_path)) {
    std::ifstream in(report_path);
    std::string line;
    std::getline(in, line);
    while (std::getline(in, line)) {
      TrainReportRow row;
      std::sscanf(line.c_str(), "%ld,%ld,%lf,%lf,%lf", &row.update, &row.env_steps,
                  &row.mean_task_reward, &row.mean_reward, &row.mean_kl);
      arm.rows.push_back(row);
    }
  } else {
    PpoConfig ppo;
    ppo.n_parallel_worlds = 16;
    // Desk-scale optimizer setting: a few hundred updates must make visible
    // progress, so the step size is larger and minibatches smaller than the
    // library defaults (which mirror the full-scale table).
    ppo.lr = 1e-3;
    ppo.minibatch_size = 512;
    ppo.total_env_steps = budget;
    LateFusionNet policy(policy_spec(ws.sim, ws.vocab.size()), derive_seed(seed, 0x706f6cULL));
    AdamState adam;
    adam.reset(policy.params().total_size());
    long env_steps = 0;
    long update = 0;
    const int N = static_cast<int>(ws.train_scen.size());
    double t0 = now_s();
    while (env_steps < budget) {
      std::vector<const Scenario*> batch;
      for (int w = 0; w < ppo.n_parallel_worlds; ++w) {
        batch.push_back(&ws.train_scen[(update * ppo.n_parallel_worlds + w) % N]);
      }
      RolloutBuffer buf = collect_rollouts(policy, ws.reference, batch, ws.vocab, ws.sim, reward,
                                           derive_seed(seed, 0x636f6cULL, update));
      assemble_rewards(buf, reward);
      compute_gae(buf, ppo.gamma, ppo.gae_lambda, ppo.norm_adv);
      TrainReportRow row = ppo_update(policy, adam, buf, ppo, reward,
                                      derive_seed(seed, 0x757064ULL, update));
      env_steps += buf.size();
      ++update;
      row.update = update;
      row.env_steps = env_steps;
      arm.rows.push_back(row);
      if (update % 20 == 0) {
        std::printf("  [%s] update %ld, %ld steps, mean_kl %.4f (%.0f s)\n", name.c_str(), update,
                    env_steps, row.mean_kl, now_s() - t0);
        std::fflush(stdout);
      }
    }
    save_net(policy, arm.checkpoint.string(), &adam, seed, update);
    TrainReport report;
    report.rows = arm.rows;
    report.write_csv(report_path.string());
  }

  if (first_kl != nullptr && !arm.rows.empty()) *first_kl = arm.rows.front().mean_kl;
  if (best_window != nullptr) {
    double best = std::numeric_limits<double>::infinity();
    long at = -1;
    for (std::size_t u = 9; u < arm.rows.size(); ++u) {
      double acc = 0.0;
      for (std::size_t k = u - 9; k <= u; ++k) acc += arm.rows[k].mean_kl;
      acc /= 10.0;
      if (acc < best) {
        best = acc;
        at = arm.rows[u].env_steps;
      }
    }
    *best_window = best;
    if (steps_at_converge != nullptr) *steps_at_converge = at;
  }
  return arm;
}

struct HeldoutEval {
  double min_ade = 0.0;
  double composite = 0.0;
  double collision_rate = 0.0;
  double offroad_rate = 0.0;
};

HeldoutEval eval_policy_on_heldout(Workspace& ws, const fs::path& checkpoint, int samples,
                                   std::uint64_t seed) {
  LateFusionNet net = load_net(checkpoint.string());
  auto specs = default_feature_specs();
  HeldoutEval out;
  for (std::size_t i = 0; i < ws.heldout_scen.size(); ++i) {
    std::vector<std::uint64_t> seeds;
    for (int s = 0; s < samples; ++s) seeds.push_back(derive_seed(seed, i, s));
    RolloutSet set = simulate_rollout_set({&net, false}, ws.heldout_scen[i], ws.vocab, ws.sim,
                                          seeds);
    RealismReport rep = realism_score(set, ws.heldout_scen[i], specs);
    out.min_ade += rep.min_ade;
    out.composite += rep.composite;
    out.collision_rate += rep.collision_rate;
    out.offroad_rate += rep.offroad_rate;
  }
  double n = static_cast<double>(ws.heldout_scen.size());
  out.min_ade /= n;
  out.composite /= n;
  out.collision_rate /= n;
  out.offroad_rate /= n;
  return out;
}

// ---------------------------------------------------------------------------
// Criterion 1: numeric kernel oracles

void criterion_1(Workspace& ws, CheckContext& ctx) {
  // Finite differences on every deployed architecture (policy actor-critic
  // and the centralized reference), strided over every parameter tensor.
  auto fd_check = [&](LateFusionNet& net, bool has_critic, const char* label) {
    ParamSet ps = net.params();
    Rng rng(derive_seed(kSeed, 21));
    auto theta = ps.flat_values();
    for (auto& t : theta) t += 0.03 * rng.normal();
    ps.set_flat_values(theta);
    const FusionSpec& spec = net.spec();
    const int B = 3, K = spec.n_actions, D = spec.layout.total_dim();
    std::vector<double> obs(B * D);
    for (auto& v : obs) v = rng.uniform(-1, 1);
    const FeatureLayout& L = spec.layout;
    for (int b = 0; b < B; ++b) {
      for (int p = 0; p < L.n_partner; ++p) obs[b * D + L.partner_mask_offset() + p] = (b + p) % 2;
      for (int r = 0; r < L.n_road; ++r) obs[b * D + L.road_mask_offset() + r] = (b + r) % 4 ? 1 : 0;
    }
    std::vector<double> cw(B * K), dw(B);
    for (auto& v : cw) v = rng.normal();
    for (auto& v : dw) v = rng.normal();
    const std::uint64_t drop_seed = 7;

    auto loss_at = [&](const std::vector<double>& flat) {
      ps.set_flat_values(flat);
      FusionCache cache;
      std::vector<double> logits(B * K), values(B);
      net.forward(obs.data(), B, cache, true, drop_seed, logits.data(),
                  has_critic ? values.data() : nullptr);
      double l = 0.0;
      for (std::size_t i = 0; i < logits.size(); ++i) l += cw[i] * logits[i];
      if (has_critic) {
        for (int b = 0; b < B; ++b) l += dw[b] * values[b];
      }
      return l;
    };

    FusionCache cache;
    std::vector<double> logits(B * K), values(B);
    ps.set_flat_values(theta);
    net.forward(obs.data(), B, cache, true, drop_seed, logits.data(),
                has_critic ? values.data() : nullptr);
    ps.zero_grads();
    net.backward(cache, cw.data(), has_critic ? dw.data() : nullptr);
    auto analytic = ps.flat_grads();

    const double h = 1e-4;
    int bad = 0, checked = 0;
    for (std::size_t i = 0; i < theta.size(); i += 37) {
      auto tp = theta, tm = theta;
      tp[i] += h;
      tm[i] -= h;
      double fd = (loss_at(tp) - loss_at(tm)) / (2 * h);
      if (std::abs(analytic[i] - fd) > 1e-3 * std::max({1.0, std::abs(fd), std::abs(analytic[i])})) {
        ++bad;
      }
      ++checked;
    }
    ctx.expect(bad == 0, std::string(label) + ": " + std::to_string(bad) + "/" +
                             std::to_string(checked) + " FD mismatches");
  };

  LateFusionNet policy(policy_spec(ws.sim, ws.vocab.size()), 3);
  fd_check(policy, true, "policy FD");
  LateFusionNet ref(reference_spec(ws.sim, ws.vocab.size(), false), 4);
  fd_check(ref, false, "reference FD");

  // KL closed form vs Monte-Carlo, 3 sigma over 1e6 samples.
  {
    Rng rng(derive_seed(kSeed, 22));
    std::vector<double> pl(16), ql(16);
    for (auto& v : pl) v = rng.uniform(-1.5, 1.5);
    for (auto& v : ql) v = rng.uniform(-1.5, 1.5);
    CategoricalDist p = CategoricalDist::from_logits(pl);
    CategoricalDist q = CategoricalDist::from_logits(ql);
    double kl = kl_categorical(p, q);
    const int N = 1000000;
    double sum = 0.0, sum2 = 0.0;
    Rng sampler(derive_seed(kSeed, 23));
    for (int i = 0; i < N; ++i) {
      int a = p.sample(sampler);
      double x = p.log_probs[a] - q.log_probs[a];
      sum += x;
      sum2 += x * x;
    }
    double mc = sum / N;
    double se = std::sqrt((sum2 / N - mc * mc) / N);
    ctx.expect(std::abs(kl - mc) <= 3.0 * se, "KL closed form vs Monte-Carlo");
  }

  // GAE vs the brute-force double loop at 1e-10.
  {
    Rng rng(derive_seed(kSeed, 24));
    for (int trial = 0; trial < 50; ++trial) {
      RolloutBuffer buf;
      const int T = 5 + rng.uniform_int(30);
      for (int t = 0; t < T; ++t) {
        buf.rewards.push_back(rng.normal());
        buf.values.push_back(rng.normal());
        buf.done.push_back(t == T - 1);
        buf.actions.push_back(0);
      }
      buf.advantages.assign(T, 0.0);
      buf.returns.assign(T, 0.0);
      buf.segments = {{0, T}};
      const double gamma = 0.99, lambda = 0.95;
      compute_gae(buf, gamma, lambda, false);
      for (int t = 0; t < T; ++t) {
        double acc = 0.0;
        for (int k = t; k < T; ++k) {
          double v_next = k + 1 < T ? buf.values[k + 1] : 0.0;
          double nonterminal = buf.done[k] ? 0.0 : 1.0;
          acc += std::pow(gamma * lambda, k - t) *
                 (buf.rewards[k] + gamma * v_next * nonterminal - buf.values[k]);
          if (buf.done[k]) break;
        }
        ctx.expect(std::abs(buf.advantages[t] - acc) <= 1e-10, "GAE oracle mismatch");
      }
    }
  }

  // Softmax shift invariance at 1e-9.
  {
    Rng rng(derive_seed(kSeed, 25));
    for (int trial = 0; trial < 200; ++trial) {
      int k = 2 + rng.uniform_int(63);
      std::vector<double> logits(k), lp1(k), lp2(k), shifted(k);
      for (auto& v : logits) v = rng.uniform(-40, 40);
      double shift = rng.uniform(-100, 100);
      for (int i = 0; i < k; ++i) shifted[i] = logits[i] + shift;
      log_softmax(logits.data(), k, lp1.data());
      log_softmax(shifted.data(), k, lp2.data());
      for (int i = 0; i < k; ++i) {
        ctx.expect(std::abs(lp1[i] - lp2[i]) <= 1e-9, "log-softmax shift invariance");
      }
    }
  }
}

// ---------------------------------------------------------------------------
// Criterion 2: tokenizer suite

void criterion_2(Workspace& ws, CheckContext& ctx) {
  const TokenVocab& v = ws.vocab;
  for (int i = 0; i < v.size(); ++i) {
    for (int j = i + 1; j < v.size(); ++j) {
      ctx.expect(segment_distance(v.tokens[i], v.tokens[j], v.distance_lambda) > v.radius,
                 "pairwise token separation");
    }
  }

  // Encode vs an independent linear-scan oracle on 1e3 random segments.
  Rng rng(derive_seed(kSeed, 31));
  for (int trial = 0; trial < 1000; ++trial) {
    MotionSegment seg;
    seg.rel_poses = {{rng.uniform(-2, 2), rng.uniform(-0.4, 0.4), rng.uniform(-0.3, 0.3)},
                     {rng.uniform(-2, 2), rng.uniform(-0.4, 0.4), rng.uniform(-0.3, 0.3)}};
    int best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (int i = 0; i < v.size(); ++i) {
      double d = segment_distance(seg, v.tokens[i], v.distance_lambda);
      if (d < best_d) {
        best_d = d;
        best = i;
      }
    }
    ctx.expect(encode_segment(seg, v).index == best, "encode matches the linear-scan oracle");
  }

  // Per-window reconstruction bound on expert tracks (uncapped fit).
  {
    std::vector<Scenario> sample(ws.train_scen.begin(), ws.train_scen.begin() + 3);
    std::vector<MotionSegment> segs = corpus_segments(sample);
    KdiskFit fit = fit_kdisk(segs, 0.05, 1 << 20, derive_seed(kSeed, 32));
    ctx.expect(fit.coverage == 1.0, "uncapped fit covers its own input");
    for (const auto& s : sample) {
      for (int a = 0; a < s.num_agents(); ++a) {
        std::vector<int> tokens = tokenize_track(s.tracks[a], fit.vocab, s.init_step);
        for (std::size_t w = 0; w < tokens.size(); ++w) {
          if (tokens[w] < 0) continue;
          int t0 = s.init_step + 2 * static_cast<int>(w);
          Pose2 sim = s.tracks[a].states[t0].pose;
          for (int h = 0; h < 2; ++h) {
            sim = compose(sim, fit.vocab.tokens[tokens[w]].rel_poses[h]);
            const Pose2& truth = s.tracks[a].states[t0 + h + 1].pose;
            double err = std::hypot(sim.x - truth.x, sim.y - truth.y) +
                         fit.vocab.distance_lambda *
                             std::abs(normalize_angle(sim.heading - truth.heading));
            ctx.expect(err <= fit.vocab.radius + 1e-9, "per-window reconstruction bound");
          }
        }
      }
    }
  }

  // apply_token identity and rigid-motion equivariance.
  MotionSegment zero;
  zero.rel_poses = {{0, 0, 0}, {0, 0, 0}};
  for (int trial = 0; trial < 100; ++trial) {
    Pose2 p{rng.uniform(-10, 10), rng.uniform(-10, 10), rng.uniform(-3, 3)};
    TokenMotion m = apply_token(p, 1.0, zero);
    ctx.expect(m.pose.x == p.x && m.pose.y == p.y && m.speed == 0.0, "zero token identity");
    const MotionSegment& tok = v.tokens[rng.uniform_int(v.size())];
    Pose2 g{rng.uniform(-10, 10), rng.uniform(-10, 10), rng.uniform(-3, 3)};
    Pose2 lhs = apply_token(compose(g, p), 0.0, tok).pose;
    Pose2 rhs = compose(g, apply_token(p, 0.0, tok).pose);
    bool same = std::abs(lhs.x - rhs.x) < 1e-9 && std::abs(lhs.y - rhs.y) < 1e-9 &&
                std::abs(normalize_angle(lhs.heading - rhs.heading)) < 1e-9;
    ctx.expect(same, "apply_token rigid-motion equivariance");
  }
}

// ---------------------------------------------------------------------------
// Criterion 3: simulator suite

void criterion_3(Workspace& ws, CheckContext& ctx) {
  // Log replay bit-fidelity.
  for (int i = 0; i < 5; ++i) {
    Scenario s = ws.train_scen[i];
    std::fill(s.controlled.begin(), s.controlled.end(), 0);
    WorldState w = reset(s, ws.sim);
    JointActions none;
    none.tokens.assign(s.num_agents(), -1);
    bool exact = true;
    while (!episode_over(w, s)) {
      step(w, none, ws.vocab, s, ws.sim);
      for (int a = 0; a < s.num_agents(); ++a) {
        const AgentState& truth = s.tracks[a].states[w.step];
        exact = exact && w.agents[a].pose.x == truth.pose.x &&
                w.agents[a].pose.y == truth.pose.y &&
                w.agents[a].pose.heading == truth.pose.heading && w.agents[a].speed == truth.speed;
      }
    }
    ctx.expect(exact, "log replay bit-fidelity, scenario " + s.id);
  }

  // Worker-count independence of batched collection.
  {
    LateFusionNet policy(policy_spec(ws.sim, ws.vocab.size()), 5);
    std::vector<const Scenario*> batch;
    for (int i = 0; i < 6; ++i) batch.push_back(&ws.train_scen[i]);
    set_max_workers(1);
    RolloutBuffer b1 = collect_rollouts(policy, ws.reference, batch, ws.vocab, ws.sim,
                                        RewardConfig{}, 77);
    set_max_workers(8);
    RolloutBuffer b8 = collect_rollouts(policy, ws.reference, batch, ws.vocab, ws.sim,
                                        RewardConfig{}, 77);
    set_max_workers(0);
    ctx.expect(b1.obs == b8.obs && b1.actions == b8.actions && b1.logp_old == b8.logp_old &&
                   b1.ref_log_probs == b8.ref_log_probs,
               "--workers 1 vs --workers 8 determinism");
  }

  // Ego-frame invariance under a global rigid transform.
  {
    const Scenario& s = ws.train_scen[2];
    double angle = 1.234;
    Vec2 shift{31.0, -17.0};
    Scenario r = s;
    double c = std::cos(angle), sn = std::sin(angle);
    auto rot_pt = [&](Vec2 p) {
      return Vec2{c * p.x - sn * p.y + shift.x, sn * p.x + c * p.y + shift.y};
    };
    for (auto* polys : {&r.road_graph.lane_centerlines, &r.road_graph.road_edges,
                        &r.road_graph.drivable_areas}) {
      for (auto& poly : *polys) {
        for (auto& p : poly) p = rot_pt(p);
      }
    }
    for (auto& tr : r.tracks) {
      for (auto& st : tr.states) {
        Vec2 xy = rot_pt(st.pose.position());
        st.pose = {xy.x, xy.y, normalize_angle(st.pose.heading + angle)};
      }
    }
    for (auto& g : r.goals) g.position = rot_pt(g.position);

    WorldState w0 = reset(s, ws.sim);
    WorldState w1 = reset(r, ws.sim);
    double max_err = 0.0;
    for (int a = 0; a < s.num_agents(); ++a) {
      Observation o0 = build_observation(w0, a, s, ws.sim, false);
      Observation o1 = build_observation(w1, a, r, ws.sim, false);
      for (std::size_t k = 0; k < o0.features.size(); ++k) {
        max_err = std::max(max_err, std::abs(o0.features[k] - o1.features[k]));
      }
      GlobalContext c0 = build_global_context(w0, a, s, ws.sim);
      GlobalContext c1 = build_global_context(w1, a, r, ws.sim);
      for (std::size_t k = 0; k < c0.features.size(); ++k) {
        max_err = std::max(max_err, std::abs(c0.features[k] - c1.features[k]));
      }
    }
    ctx.expect(max_err <= 1e-9, "ego-frame invariance (max err " + std::to_string(max_err) + ")");
  }

  // Collision SAT vs the rasterization oracle on 1e3 pairs.
  {
    Rng rng(derive_seed(kSeed, 41));
    auto covers = [](const AgentState& s, const Vec2& p) {
      Vec2 local = to_frame(s.pose, p);
      return std::abs(local.x) <= 0.5 * s.length && std::abs(local.y) <= 0.5 * s.width;
    };
    auto raster = [&](const AgentState& a, const AgentState& b) {
      auto sample = [&](const AgentState& src, const AgentState& dst) {
        int nx = static_cast<int>(src.length / 0.05) + 1;
        int ny = static_cast<int>(src.width / 0.05) + 1;
        for (int ix = 0; ix <= nx; ++ix) {
          for (int iy = 0; iy <= ny; ++iy) {
            Pose2 w = compose(src.pose, Pose2{-0.5 * src.length + src.length * ix / nx,
                                              -0.5 * src.width + src.width * iy / ny, 0.0});
            if (covers(dst, {w.x, w.y})) return true;
          }
        }
        return false;
      };
      return sample(a, b) || sample(b, a);
    };
    int checked = 0;
    while (checked < 1000) {
      AgentState a, b;
      a.pose = {rng.uniform(-4, 4), rng.uniform(-4, 4), rng.uniform(-3.2, 3.2)};
      a.length = rng.uniform(2.5, 5.5);
      a.width = rng.uniform(1.2, 2.4);
      b.pose = {rng.uniform(-4, 4), rng.uniform(-4, 4), rng.uniform(-3.2, 3.2)};
      b.length = rng.uniform(2.5, 5.5);
      b.width = rng.uniform(1.2, 2.4);
      double margin = obb_sat_margin(a.pose, a.length, a.width, b.pose, b.length, b.width);
      if (std::abs(margin) < 0.06) continue;  // undecidable for the raster pitch
      ctx.expect(collision_check(a, b) == raster(a, b), "SAT vs raster oracle");
      ++checked;
    }
  }
}

// ---------------------------------------------------------------------------
// Criterion 4: metric suite

void criterion_4(Workspace& ws, CheckContext& ctx) {
  const Scenario& s = ws.train_scen[0];

  // Perfect-replay limit with epsilon -> 0.
  RolloutSet replay;
  for (int k = 0; k < 8; ++k) {
    replay.seeds.push_back(k);
    WorldRollout wr;
    wr.agents.resize(s.num_agents());
    for (int a = 0; a < s.num_agents(); ++a) {
      for (int t = s.init_step; t <= s.init_step + s.horizon_steps; ++t) {
        wr.agents[a].poses.push_back(s.tracks[a].states[t].pose);
        wr.agents[a].speeds.push_back(s.tracks[a].states[t].speed);
        wr.agents[a].valid.push_back(1);
        if (t > s.init_step) {
          wr.agents[a].collided.push_back(0);
          wr.agents[a].offroad.push_back(0);
        }
      }
    }
    replay.samples.push_back(std::move(wr));
  }
  auto specs = default_feature_specs();
  for (auto& sp : specs) sp.epsilon = 1e-12;
  RealismReport rep = realism_score(replay, s, specs);
  ctx.expect(std::abs(rep.composite - 1.0) <= 1e-9, "perfect-replay composite -> 1");
  ctx.expect(rep.min_ade == 0.0, "perfect-replay minADE = 0");
  ctx.expect(rep.collision_rate == 0.0 && rep.offroad_rate == 0.0, "perfect-replay infractions");

  // m in (0, 1] on stochastic rollouts and the minADE brute-force oracle.
  {
    LateFusionNet policy(policy_spec(ws.sim, ws.vocab.size()), 6);
    std::vector<std::uint64_t> seeds;
    for (int k = 0; k < 8; ++k) seeds.push_back(100 + k);
    RolloutSet set = simulate_rollout_set({&policy, false}, s, ws.vocab, ws.sim, seeds);
    RealismReport rr = realism_score(set, s, default_feature_specs());
    for (const auto& row : rr.per_agent) {
      for (double m : row) {
        if (std::isnan(m)) continue;
        ctx.expect(m > 0.0 && m <= 1.0 + 1e-12, "m(a,j) in (0,1]");
      }
    }
    ctx.expect(rr.composite > 0.0 && rr.composite <= 1.0, "composite in (0,1]");

    double expected = 0.0;
    int counted = 0;
    for (int a = 0; a < s.num_agents(); ++a) {
      if (!s.controlled[a]) continue;
      double best = std::numeric_limits<double>::infinity();
      for (const auto& wr : set.samples) {
        double err = 0.0;
        int n = 0;
        for (int i = 1; i <= s.horizon_steps; ++i) {
          const AgentState& gt = s.tracks[a].states[s.init_step + i];
          if (!gt.valid) continue;
          err += (wr.agents[a].poses[i].position() - gt.pose.position()).norm();
          ++n;
        }
        if (n > 0) best = std::min(best, err / n);
      }
      expected += best;
      ++counted;
    }
    expected /= counted;
    ctx.expect(std::abs(min_ade(set, s).value - expected) <= 1e-12, "minADE brute-force oracle");
  }

  // Hand-computed 2-agent, 2-feature fixture for the aggregation formulas.
  {
    Scenario fx = ws.train_scen[1];
    fx.tracks.resize(2);
    fx.goals.resize(2);
    fx.controlled.assign(2, 1);
    for (int t = 0; t < fx.total_steps(); ++t) {
      fx.tracks[0].states[t].pose = {50.0 + 1.0 * t, 0.0, 0.0};
      fx.tracks[0].states[t].speed = 10.0;
      fx.tracks[0].states[t].valid = true;
      fx.tracks[1].states[t].pose = {50.0 + 2.0 * t, 4.0, 0.0};
      fx.tracks[1].states[t].speed = 20.0;
      fx.tracks[1].states[t].valid = true;
    }
    fx.goals[0].position = fx.tracks[0].states.back().pose.position();
    fx.goals[1].position = fx.tracks[1].states.back().pose.position();

    const int S = 4;
    RolloutSet set;
    for (int k = 0; k < S; ++k) {
      set.seeds.push_back(k);
      WorldRollout wr;
      wr.agents.resize(2);
      for (int i = 0; i <= fx.horizon_steps; ++i) {
        int t = fx.init_step + i;
        wr.agents[0].poses.push_back(fx.tracks[0].states[t].pose);
        wr.agents[0].speeds.push_back(10.0);
        wr.agents[0].valid.push_back(1);
        wr.agents[1].poses.push_back({50.0 + 1.2 * t, 4.0, 0.0});
        wr.agents[1].speeds.push_back(12.0);
        wr.agents[1].valid.push_back(1);
        if (i > 0) {
          for (int a = 0; a < 2; ++a) {
            wr.agents[a].collided.push_back(0);
            wr.agents[a].offroad.push_back(0);
          }
        }
      }
      set.samples.push_back(std::move(wr));
    }
    const double eps = 1e-3;
    std::vector<FeatureSpec> two = {
        {"speed", FeatureExtractor::speed, FeatureCategory::kinematic, 0.0, 30.0, 20, eps},
        {"yaw_rate", FeatureExtractor::yaw_rate, FeatureCategory::kinematic, -1.0, 1.0, 16, eps}};
    RealismReport fr = realism_score(set, fx, two);
    double p_hit20 = (S + eps) / (S + eps * 20);
    double p_miss20 = eps / (S + eps * 20);
    double p_hit16 = (S + eps) / (S + eps * 16);
    ctx.expect(std::abs(fr.per_agent[0][0] - p_hit20) <= 1e-9, "fixture m(0,speed)");
    ctx.expect(std::abs(fr.per_agent[1][0] - p_miss20) <= 1e-9, "fixture m(1,speed)");
    ctx.expect(std::abs(fr.per_agent[0][1] - p_hit16) <= 1e-9, "fixture m(0,yaw)");
    ctx.expect(std::abs(fr.per_feature[0] - 0.5 * (p_hit20 + p_miss20)) <= 1e-9,
               "fixture m(speed) agent mean");
    double kin = 0.5 * (fr.per_feature[0] + fr.per_feature[1]);
    ctx.expect(std::abs(fr.kinematic - kin) <= 1e-12, "fixture kinematic category");
    ctx.expect(std::abs(fr.composite - kin / 3.0) <= 1e-12, "fixture composite");
  }
}

// ---------------------------------------------------------------------------
// Criterion 5: planner suite

void criterion_5(Workspace& ws, CheckContext& ctx) {
  (void)ws;
  IdmParams p;
  ctx.expect(idm_acceleration(p, p.desired_speed, false, 0.0, 0.0) == 0.0,
             "IDM equilibrium accel is exactly zero");

  // Monotonicity grids (strict wherever the stability clip does not bind).
  {
    const double lo = -2.0 * p.comfort_decel, hi = idm_effective_accel(p);
    auto inside = [&](double a) { return a > lo + 1e-12 && a < hi - 1e-12; };
    double prev = 1e300;
    for (double v = 0.5; v <= 28.0; v += 0.25) {
      double a = idm_acceleration(p, v, true, 25.0, 8.0);
      ctx.expect(a <= prev, "IDM decreasing in speed");
      if (inside(a) && inside(prev)) ctx.expect(a < prev, "IDM strictly decreasing in speed");
      prev = a;
    }
    prev = -1e300;
    for (double g = 3.0; g <= 120.0; g += 0.5) {
      double a = idm_acceleration(p, 15.0, true, g, 8.0);
      ctx.expect(a >= prev, "IDM increasing in gap");
      if (inside(a) && inside(prev)) ctx.expect(a > prev, "IDM strictly increasing in gap");
      prev = a;
    }
  }

  // Frenet boundary conditions at 1e-9.
  {
    Rng rng(derive_seed(kSeed, 51));
    for (int trial = 0; trial < 300; ++trial) {
      double x0 = rng.uniform(-5, 5), v0 = rng.uniform(-3, 3), a0 = rng.uniform(-2, 2);
      double x1 = rng.uniform(-5, 5), v1 = rng.uniform(-3, 3), a1 = rng.uniform(-2, 2);
      double T = rng.uniform(0.5, 6.0);
      auto qc = quintic_coeffs(x0, v0, a0, x1, v1, a1, T);
      bool ok = std::abs(poly_eval(qc, 0.0) - x0) <= 1e-9 &&
                std::abs(poly_eval_d1(qc, 0.0) - v0) <= 1e-9 &&
                std::abs(poly_eval_d2(qc, 0.0) - a0) <= 1e-9 &&
                std::abs(poly_eval(qc, T) - x1) <= 1e-9 &&
                std::abs(poly_eval_d1(qc, T) - v1) <= 1e-9 &&
                std::abs(poly_eval_d2(qc, T) - a1) <= 1e-9;
      auto c4 = quartic_coeffs(x0, v0, a0, v1, a1, T);
      ok = ok && std::abs(poly_eval_d1(c4, T) - v1) <= 1e-9 &&
           std::abs(poly_eval_d2(c4, T) - a1) <= 1e-9;
      ctx.expect(ok, "polynomial boundary conditions");
    }
  }

  // Preset tables, field for field, builtin and shipped file.
  {
    PlannerPresets builtin = builtin_planner_presets();
    PlannerPresets shipped =
        load_planner_presets(std::string(TSIM_SOURCE_DIR) + "/data/planner_presets.json");
    ctx.expect(builtin.idm.size() == 10 && builtin.frenet.size() == 10, "10 + 10 presets");
    struct IdmRow {
      const char* name;
      double v0, s0, T, agg, a, b;
    };
    const IdmRow idm_rows[] = {
        {"IDM Baseline", 30, 2.0, 1.5, 0.5, 2.0, 3.0},
        {"IDM Conservative", 25, 3.0, 2.0, 0.2, 1.5, 2.0},
        {"IDM Aggressive", 35, 1.5, 1.0, 0.8, 3.0, 4.0},
        {"IDM Comfort", 28, 2.5, 1.8, 0.3, 1.5, 2.0},
        {"IDM Highway", 40, 3.0, 1.2, 0.6, 2.0, 3.0},
        {"IDM City", 15, 2.0, 1.5, 0.4, 2.0, 3.0},
        {"IDM Truck", 25, 4.0, 2.0, 0.3, 2.0, 3.0},
        {"IDM Emergency", 40, 1.5, 0.8, 0.9, 4.0, 3.0},
        {"IDM Adaptive", 30, 2.5, 1.5, 0.5, 2.0, 3.0},
        {"IDM Defensive", 25, 4.0, 2.5, 0.1, 2.0, 3.0},
    };
    for (const auto& presets : {builtin, shipped}) {
      for (const IdmRow& row : idm_rows) {
        bool found = false;
        for (const auto& vp : presets.idm) {
          if (vp.name != row.name) continue;
          found = true;
          ctx.expect(vp.params.desired_speed == row.v0 && vp.params.min_spacing == row.s0 &&
                         vp.params.time_headway == row.T && vp.params.aggressiveness == row.agg &&
                         vp.params.max_accel == row.a && vp.params.comfort_decel == row.b,
                     std::string("IDM table row ") + row.name);
        }
        ctx.expect(found, std::string("IDM preset present: ") + row.name);
      }
      struct FrRow {
        const char* name;
        double v_min, v_max, w_l;
        int nd, nv, nt;
      };
      const FrRow fr_rows[] = {
          {"Frenet Baseline", 0, 30, 10.0, 15, 7, 5},
          {"Frenet Aggressive", 0, 35, 5.0, 15, 7, 5},
          {"Frenet Conservative", 0, 20, 50.0, 15, 7, 5},
          {"Frenet Smooth Rider", 0, 30, 20.0, 15, 7, 5},
          {"Frenet Lane Keeper", 0, 30, 100.0, 15, 7, 5},
          {"Frenet Wide Search", 0, 30, 10.0, 20, 10, 7},
          {"Frenet Fast Planner", 0, 30, 10.0, 5, 3, 2},
          {"Frenet Long Horizon", 0, 30, 10.0, 15, 7, 5},
          {"Frenet No Collision", 0, 30, 10.0, 15, 7, 5},
          {"Frenet High Speed", 5, 40, 10.0, 15, 7, 5},
      };
      for (const FrRow& row : fr_rows) {
        bool found = false;
        for (const auto& vp : presets.frenet) {
          if (vp.name != row.name) continue;
          found = true;
          ctx.expect(vp.params.v_min == row.v_min && vp.params.v_max == row.v_max &&
                         vp.params.w_lateral == row.w_l && vp.params.n_lateral == row.nd &&
                         vp.params.n_velocity == row.nv && vp.params.n_time == row.nt,
                     std::string("Frenet table row ") + row.name);
        }
        ctx.expect(found, std::string("Frenet preset present: ") + row.name);
      }
    }
    ctx.expect(builtin.frenet[2].params.collision_penalty == 5000.0,
               "Conservative collision penalty 5000");
    ctx.expect(builtin.frenet[8].params.collision_penalty == 0.0, "No Collision penalty 0");
    ctx.expect(builtin.frenet[7].params.horizon_steps == 40, "Long Horizon 40 steps");
    ctx.expect(builtin.frenet[4].params.lateral_span == 1.5, "Lane Keeper span 1.5");
    ctx.expect(builtin.frenet[9].params.velocity_span == 15.0, "High Speed velocity span 15");
  }

  // pdm_score hard-gate zeroing.
  {
    std::vector<Vec2> route;
    for (int i = 0; i <= 100; ++i) route.push_back({2.0 * i, 0.0});
    EgoRollout r;
    for (int i = 0; i <= 20; ++i) {
      r.poses.push_back({1.0 * i, 0.0, 0.0});
      if (i > 0) {
        r.collided.push_back(0);
        r.offroad.push_back(0);
        r.ttc.push_back(10.0);
      }
    }
    PdmWeights w;
    double clean = pdm_score(r, route, 20.0, w);
    ctx.expect(clean > 0.0 && clean <= 1.0, "clean PDM score in (0,1]");
    EgoRollout crash = r;
    crash.collided[3] = 1;
    ctx.expect(pdm_score(crash, route, 20.0, w) == 0.0, "collision gate zeroes the score");
    EgoRollout off = r;
    off.offroad[5] = 1;
    ctx.expect(pdm_score(off, route, 20.0, w) == 0.0, "offroad gate zeroes the score");
  }
}

// ---------------------------------------------------------------------------
// Criteria 6 and 7: anchoring convergence + directional realism

RewardConfig anchored_reward() {
  RewardConfig rw;  // beta 1, alpha 0, no goal reward, infraction penalties
  rw.kl_beta = 1.0;
  rw.w_goal = 0.0;
  rw.w_humanlike = 0.0;
  return rw;
}

RewardConfig plain_ppo_reward() {
  RewardConfig rw;
  rw.kl_beta = 0.0;
  rw.w_goal = 1.0;
  rw.w_humanlike = 0.0;
  return rw;
}

void criterion_6(Workspace& ws, CheckContext& ctx) {
  ctx.expect(ws.bc_val_acc >= 0.6, "BC reference val top-1 >= 0.6 (got " +
                                       std::to_string(ws.bc_val_acc) + ")");
  double first_kl = 0.0, best_window = 0.0;
  long at_steps = -1;
  run_arm(ws, "anchored", anchored_reward(), kPairedBudget, derive_seed(kSeed, 61), &first_kl,
          &best_window, &at_steps);
  std::printf("  [c6] first-update KL %.4f, best smoothed KL %.4f at %ld env steps\n", first_kl,
              best_window, at_steps);
  ctx.expect(at_steps > 0 && at_steps <= kKlBudgetCap, "convergence within the 2M step budget");
  ctx.expect(best_window <= 0.2 * first_kl,
             "smoothed KL reduced by >= 80% (first " + std::to_string(first_kl) + ", best " +
                 std::to_string(best_window) + ")");
}

void criterion_7(Workspace& ws, CheckContext& ctx) {
  run_arm(ws, "anchored", anchored_reward(), kPairedBudget, derive_seed(kSeed, 61));
  run_arm(ws, "plain_ppo", plain_ppo_reward(), kPairedBudget, derive_seed(kSeed, 61));

  fs::path cache = ws.root / "heldout_eval.txt";
  HeldoutEval anchored, plain;
  if (fs::exists(cache)) {
    std::ifstream in(cache);
    in >> anchored.min_ade >> anchored.composite >> plain.min_ade >> plain.composite;
  } else {
    std::printf("  [c7] evaluating both arms on %d held-out scenarios (S=16)...\n",
                kHeldoutScenarios);
    anchored = eval_policy_on_heldout(ws, ws.root / "anchored.json", 16, derive_seed(kSeed, 71));
    plain = eval_policy_on_heldout(ws, ws.root / "plain_ppo.json", 16, derive_seed(kSeed, 71));
    std::ofstream out(cache);
    out.precision(17);
    out << anchored.min_ade << " " << anchored.composite << " " << plain.min_ade << " "
        << plain.composite << "\n";
  }
  std::printf(
      "  [c7] anchored: minADE %.3f composite %.4f | plain PPO: minADE %.3f composite %.4f\n",
      anchored.min_ade, anchored.composite, plain.min_ade, plain.composite);
  ctx.expect(anchored.min_ade <= 0.6 * plain.min_ade,
             "anchored minADE <= 0.6x plain (" + std::to_string(anchored.min_ade) + " vs " +
                 std::to_string(plain.min_ade) + ")");
  ctx.expect(anchored.composite > plain.composite,
             "anchored composite strictly higher (" + std::to_string(anchored.composite) +
                 " vs " + std::to_string(plain.composite) + ")");
}

// ---------------------------------------------------------------------------
// Criterion 8: the five reward ablations are pure RunConfig

void criterion_8(Workspace& ws, CheckContext& ctx) {
  struct Ablation {
    const char* file;
    double w_goal, alpha, beta;
  };
  const Ablation rows[] = {
      {"ablation_no_kl_no_llh.json", 1.0, 0.0, 0.0},
      {"ablation_goal_llh.json", 1.0, 1.0, 0.0},
      {"ablation_goal_kl.json", 1.0, 0.0, 1.0},
      {"ablation_kl_infraction.json", 0.0, 0.0, 1.0},
      {"ablation_kl_infraction_llh.json", 0.0, 1.0, 1.0},
  };
  for (const Ablation& row : rows) {
    TrainRunConfig cfg = load_train_config(std::string(TSIM_SOURCE_DIR) + "/configs/" + row.file);
    ctx.expect(cfg.reward.w_goal == row.w_goal && cfg.reward.w_humanlike == row.alpha &&
                   cfg.reward.kl_beta == row.beta,
               std::string("config expresses the ablation: ") + row.file);
    ctx.expect(cfg.reward.w_collided == 0.75 && cfg.reward.w_offroad == 0.75,
               std::string("infraction weights: ") + row.file);

    // 2-update smoke run straight from the config file, no code edits.
    cfg.scenario_dir = ws.smoke_dir().string();
    cfg.vocab_path = ws.vocab_path().string();
    cfg.ref_checkpoint = ws.ref_path().string();
    cfg.out_dir = (ws.root / (std::string("smoke_") + row.file)).string();
    cfg.sim = ws.sim;
    cfg.seed = 9;
    cfg.ppo.n_parallel_worlds = 2;
    cfg.ppo.minibatch_size = 256;
    RolloutBuffer probe;
    {
      std::vector<Scenario> smoke = load_scenario_dir(ws.smoke_dir().string());
      LateFusionNet tmp_policy(policy_spec(ws.sim, ws.vocab.size()),
                               derive_seed(cfg.seed, 0x706f6cULL));
      std::vector<const Scenario*> batch = {&smoke[0], &smoke[1]};
      probe = collect_rollouts(tmp_policy, ws.reference, batch, ws.vocab, ws.sim, cfg.reward, 1);
    }
    cfg.ppo.total_env_steps = 2L * probe.size();
    TrainReport rep = train(cfg);
    ctx.expect(rep.rows.size() == 2, std::string("2-update smoke run for ") + row.file +
                                         " produced " + std::to_string(rep.rows.size()) +
                                         " rows");
  }
}

// ---------------------------------------------------------------------------
// Criterion 9: harness integrity

void criterion_9(Workspace& ws, CheckContext& ctx) {
  fs::path goal_kl = ws.root / "smoke_ablation_goal_kl.json" / "checkpoint_final.json";
  fs::path goal_llh = ws.root / "smoke_ablation_goal_llh.json" / "checkpoint_final.json";
  ctx.expect(fs::exists(goal_kl) && fs::exists(goal_llh),
             "criterion 8 smoke checkpoints available");
  std::vector<fs::path> checkpoints = {ws.root / "anchored.json", ws.root / "plain_ppo.json",
                                       goal_kl, goal_llh};

  std::vector<LateFusionNet> nets;
  nets.reserve(checkpoints.size());
  for (const auto& c : checkpoints) nets.push_back(load_net(c.string()));
  LateFusionNet anchored = load_net((ws.root / "anchored.json").string());

  PlannerPresets presets = builtin_planner_presets();
  std::vector<PlannerVariant> planners;
  for (const auto& p : presets.idm) {
    PlannerVariant v;
    v.kind = PlannerVariant::Kind::idm;
    v.name = p.name;
    v.idm = p.params;
    planners.push_back(v);
  }
  for (const auto& p : presets.frenet) {
    PlannerVariant v;
    v.kind = PlannerVariant::Kind::frenet;
    v.name = p.name;
    v.frenet = p.params;
    planners.push_back(v);
  }
  for (std::size_t i = 0; i < nets.size(); ++i) {
    PlannerVariant v;
    v.kind = PlannerVariant::Kind::policy;
    v.name = "policy_" + std::to_string(i);
    v.policy = &nets[i];
    planners.push_back(v);
  }
  ctx.expect(planners.size() == 24, "20 presets + 4 trained checkpoints");

  std::vector<Scenario> scenarios(ws.heldout_scen.begin(), ws.heldout_scen.begin() + 10);
  std::vector<EvalStrategy> strategies = {
      {StrategyTag::log_replay, "log_replay", nullptr},
      {StrategyTag::reference_rollout, "reference_rollout", &ws.reference},
      {StrategyTag::policy_rollout, "policy_rollout", &anchored},
  };
  PdmWeights weights;
  double t0 = now_s();
  ScoreMatrix m = planner_eval_matrix(planners, scenarios, strategies, ws.vocab, ws.sim, weights,
                                      derive_seed(kSeed, 91));
  std::printf("  [c9] matrix %zux%zux%zu in %.0f s\n", m.planner_names.size(),
              m.strategy_names.size(), m.scenario_ids.size(), now_s() - t0);
  ctx.expect(m.all_cells_present(), "no silent gaps in the score matrix");
  int ok_cells = 0, err_cells = 0;
  for (const auto& p : m.cells) {
    for (const auto& s : p) {
      for (const auto& c : s) {
        if (c.ok) {
          ++ok_cells;
        } else {
          ++err_cells;
        }
      }
    }
  }
  std::printf("  [c9] cells ok=%d failed=%d\n", ok_cells, err_cells);
  ctx.expect(ok_cells == 24 * 3 * 10, "every cell completed");
  m.write_csv((ws.root / "score_matrix.csv").string());

  CorrelationResult self = correlation_stats(m, 0, 0);
  for (const auto& e : self.entries) {
    ctx.expect(e.pearson.has_value() && std::abs(*e.pearson - 1.0) <= 1e-12,
               "corr(X,X) = 1 for " + e.metric);
  }
  {
    std::vector<double> x = {0.4, 0.9, 0.1, 0.6, 0.3};
    std::vector<double> nx = x;
    for (auto& v : nx) v = -v;
    ctx.expect(std::abs(*pearson(x, nx) + 1.0) <= 1e-12, "corr(X,-X) = -1");
    ctx.expect(std::abs(*spearman(x, nx) + 1.0) <= 1e-12, "spearman(X,-X) = -1");
  }
  CorrelationResult gt_vs_policy = correlation_stats(m, 0, 2);
  for (const auto& e : gt_vs_policy.entries) {
    if (e.pearson) {
      ctx.expect(std::abs(*e.pearson) <= 1.0 + 1e-12, "corr within [-1,1] for " + e.metric);
    }
  }
  gt_vs_policy.write_csv((ws.root / "correlation_gt_policy.csv").string(), "log_replay",
                         "policy_rollout");

  ScoreMatrix m2 = planner_eval_matrix(planners, scenarios, strategies, ws.vocab, ws.sim, weights,
                                       derive_seed(kSeed, 91));
  bool identical = true;
  for (std::size_t p = 0; p < m.cells.size(); ++p) {
    for (std::size_t s = 0; s < m.cells[p].size(); ++s) {
      for (std::size_t c = 0; c < m.cells[p][s].size(); ++c) {
        identical = identical && m.cells[p][s][c].score == m2.cells[p][s][c].score &&
                    m.cells[p][s][c].progress == m2.cells[p][s][c].progress &&
                    m.cells[p][s][c].ok == m2.cells[p][s][c].ok;
      }
    }
  }
  ctx.expect(identical, "ScoreMatrix rerun determinism");
}

// ---------------------------------------------------------------------------
// Criterion 10: throughput report

void criterion_10(Workspace& ws, CheckContext& ctx) {
  LateFusionNet policy = load_net((ws.root / "anchored.json").string());
  std::vector<Scenario> scenarios(ws.heldout_scen.begin(), ws.heldout_scen.begin() + 6);
  std::vector<std::uint64_t> seeds = {1, 2, 3};
  BenchResult pol = throughput_bench({&policy, false}, "policy", scenarios, ws.vocab, ws.sim, 4, 2,
                                     seeds);
  BenchResult ref = throughput_bench({&ws.reference, false}, "reference", scenarios, ws.vocab,
                                     ws.sim, 4, 2, seeds);
  double ratio = pol.scenarios_per_sec_mean / ref.scenarios_per_sec_mean;
  std::printf("  [c10] policy %.2f±%.2f scen/s, reference %.2f±%.2f scen/s, ratio %.2f\n",
              pol.scenarios_per_sec_mean, pol.scenarios_per_sec_std, ref.scenarios_per_sec_mean,
              ref.scenarios_per_sec_std, ratio);
  ctx.expect(pol.scenarios_per_sec_mean > 0.0 && std::isfinite(pol.scenarios_per_sec_mean),
             "policy throughput finite and positive");
  ctx.expect(pol.scenarios_per_sec_std >= 0.0 && ref.scenarios_per_sec_std >= 0.0, "std >= 0");
  ctx.expect(static_cast<int>(seeds.size()) >= 3, ">= 3 seeds");
  ctx.expect(ratio > 1.0,
             "policy/reference throughput ratio > 1 (got " + std::to_string(ratio) + ")");

  std::string j1 = pol.to_json();
  BenchResult pol2 = throughput_bench({&policy, false}, "policy", scenarios, ws.vocab, ws.sim, 4,
                                      2, seeds);
  auto config_part = [](std::string s) {
    // Timing numbers vary run to run; the configuration echo must not.
    auto cut = s.find("\"config\"");
    return cut == std::string::npos ? s : s.substr(cut);
  };
  ctx.expect(config_part(j1) == config_part(pol2.to_json()), "configuration echo determinism");
  ctx.expect(j1.find("scenarios_per_sec") != std::string::npos &&
                 j1.find("\"mean\"") != std::string::npos &&
                 j1.find("\"std\"") != std::string::npos,
             "report format carries mean and std");
  std::ofstream out(ws.root / "bench.json");
  out << "{\n \"policy\": " << pol.to_json() << ",\n \"reference\": " << ref.to_json()
      << ",\n \"policy_over_reference_ratio\": " << ratio << "\n}\n";
}

struct CriterionEntry {
  int id;
  const char* name;
  void (*fn)(Workspace&, CheckContext&);
};

}  // namespace

int main(int argc, char** argv) {
  int only = 0;
  fs::path work = "acceptance_work";
  for (int i = 1; i < argc; ++i) {
    if (std::strcmp(argv[i], "--only") == 0 && i + 1 < argc) only = std::atoi(argv[++i]);
    if (std::strcmp(argv[i], "--work") == 0 && i + 1 < argc) work = argv[++i];
  }
  set_max_workers(0);

  std::printf("== acceptance suite ==\n");
  double t0 = now_s();
  Workspace ws = build_workspace(work);
  std::printf("  [setup] ready in %.0f s (BC val acc %.3f)\n", now_s() - t0, ws.bc_val_acc);
  std::fflush(stdout);

  const CriterionEntry entries[] = {
      {1, "numeric-kernel oracle suite", criterion_1},
      {2, "tokenizer suite", criterion_2},
      {3, "simulator suite", criterion_3},
      {4, "metric suite", criterion_4},
      {5, "planner suite", criterion_5},
      {6, "anchoring convergence", criterion_6},
      {7, "directional realism", criterion_7},
      {8, "ablation reducibility", criterion_8},
      {9, "harness integrity", criterion_9},
      {10, "throughput report", criterion_10},
  };

  int failures = 0;
  for (const auto& e : entries) {
    if (only != 0 && e.id != only) continue;
    CheckContext ctx;
    double start = now_s();
    try {
      e.fn(ws, ctx);
    } catch (const std::exception& ex) {
      ctx.expect(false, std::string("exception: ") + ex.what());
    }
    double elapsed = now_s() - start;
    if (ctx.failures == 0) {
      std::printf("[PASS] criterion %d: %s (%.1f s)\n", e.id, e.name, elapsed);
    } else {
      ++failures;
      std::printf("[FAIL] criterion %d: %s (%.1f s)\n", e.id, e.name, elapsed);
      for (const auto& n : ctx.notes) std::printf("       - %s\n", n.c_str());
    }
    std::fflush(stdout);
  }
  std::printf("== %s ==\n", failures == 0 ? "all criteria passed" : "FAILURES present");
  return failures;
}
