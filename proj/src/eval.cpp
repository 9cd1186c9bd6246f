#include "tsim/eval.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "json.hpp"
#include "tsim/common.hpp"

namespace tsim {

namespace {

// Route for a rule-based planner: the centerline closest (mean distance over
// valid steps) to the ego's logged track.
std::span<const Vec2> pick_route(const Scenario& scenario, int ego) {
  const auto& lanes = scenario.road_graph.lane_centerlines;
  double best = std::numeric_limits<double>::infinity();
  int best_idx = 0;
  for (std::size_t l = 0; l < lanes.size(); ++l) {
    double sum = 0.0;
    int cnt = 0;
    for (int t = scenario.init_step; t <= scenario.init_step + scenario.horizon_steps; t += 10) {
      const AgentState& st = scenario.tracks[ego].states[t];
      if (!st.valid) continue;
      sum += polyline_distance(lanes[l], st.pose.position());
      ++cnt;
    }
    double mean = cnt > 0 ? sum / cnt : std::numeric_limits<double>::infinity();
    if (mean < best) {
      best = mean;
      best_idx = static_cast<int>(l);
    }
  }
  return lanes[best_idx];
}

double logged_arc(const Scenario& scenario, int ego, std::span<const Vec2> route) {
  const AgentState& first = scenario.tracks[ego].states[scenario.init_step];
  const AgentState& last = scenario.tracks[ego].states[scenario.init_step + scenario.horizon_steps];
  if (!first.valid || !last.valid) return 0.0;
  double s0 = project_to_polyline(route, first.pose.position()).arc_length;
  double s1 = project_to_polyline(route, last.pose.position()).arc_length;
  return std::max(0.0, s1 - s0);
}

// Constant-velocity disc-approximation time to collision.
double ttc_estimate(const AgentState& ego, const std::vector<AgentState>& others) {
  double best = std::numeric_limits<double>::infinity();
  Vec2 pe = ego.pose.position();
  Vec2 ve{ego.speed * std::cos(ego.pose.heading), ego.speed * std::sin(ego.pose.heading)};
  double re = 0.5 * std::hypot(ego.length, ego.width);
  for (const AgentState& o : others) {
    if (!o.valid) continue;
    Vec2 r = o.pose.position() - pe;
    Vec2 v{o.speed * std::cos(o.pose.heading) - ve.x, o.speed * std::sin(o.pose.heading) - ve.y};
    double R = re + 0.5 * std::hypot(o.length, o.width);
    // Solve |r + v t| = R for the smallest positive t.
    double a = v.dot(v), b = 2.0 * r.dot(v), c = r.dot(r) - R * R;
    if (c <= 0.0) return 0.0;  // already overlapping discs
    if (a < 1e-12) continue;
    double disc = b * b - 4.0 * a * c;
    if (disc < 0.0) continue;
    double t = (-b - std::sqrt(disc)) / (2.0 * a);
    if (t >= 0.0) best = std::min(best, t);
  }
  return best;
}

CellResult run_cell(const PlannerVariant& planner, const Scenario& scenario,
                    const EvalStrategy& strategy, const TokenVocab& vocab,
                    const SimConfig& config, const PdmWeights& weights, std::uint64_t cell_seed) {
  CellResult cell;
  int ego = -1;
  for (int i = 0; i < scenario.num_agents(); ++i) {
    if (scenario.controlled[i]) {
      ego = i;
      break;
    }
  }
  if (ego < 0) {
    cell.error = "no controlled agent";
    return cell;
  }

  // Background control: under log_replay all non-ego agents follow the logs.
  Scenario scn = scenario;
  if (strategy.tag == StrategyTag::log_replay) {
    for (int i = 0; i < scn.num_agents(); ++i) {
      if (i != ego) scn.controlled[i] = 0;
    }
  }
  const LateFusionNet* bg = strategy.controller;
  if (strategy.tag != StrategyTag::log_replay && bg == nullptr) {
    cell.error = "strategy missing controller";
    return cell;
  }

  std::span<const Vec2> route = pick_route(scn, ego);
  const double log_arc = logged_arc(scn, ego, route);

  WorldState world = reset(scn, config);
  EgoRollout rollout;
  rollout.poses.push_back(world.agents[ego].pose);

  FusionCache cache;
  std::vector<double> in_batch, logits, lp;
  std::vector<SubstepSnapshot> trace;
  int policy_step = 0;
  while (!episode_over(world, scn)) {
    JointActions actions;
    actions.tokens.assign(scn.num_agents(), -1);

    // Ego action.
    if (planner.kind == PlannerVariant::Kind::policy) {
      if (!world.done[ego] && world.agent_present(ego)) {
        Observation obs = build_observation(world, ego, scn, config, false);
        CategoricalDist d = planner.policy->dist(obs.features);
        Rng rng(derive_seed(cell_seed, 0x65676fULL, policy_step));
        actions.tokens[ego] = d.sample(rng);
      }
    } else {
      PlannerView view;
      view.ego = world.agents[ego];
      for (int i = 0; i < scn.num_agents(); ++i) {
        if (i != ego && world.agent_present(i)) view.others.push_back(world.agents[i]);
      }
      actions.ego_id = ego;
      AgentState state = view.ego;
      for (int sub = 0; sub < config.policy_every; ++sub) {
        PlannerView sub_view = view;
        sub_view.ego = state;
        Pose2 next = planner.kind == PlannerVariant::Kind::idm
                         ? idm_plan(sub_view, planner.idm, route, config.dt)
                         : frenet_plan(sub_view, planner.frenet, route, config.dt);
        double disp = std::hypot(next.x - state.pose.x, next.y - state.pose.y);
        state.pose = next;
        state.speed = disp / config.dt;
        actions.ego_poses.push_back(next);
      }
    }

    // Background agents.
    std::vector<int> active;
    for (int i = 0; i < scn.num_agents(); ++i) {
      if (i != ego && scn.controlled[i] && world.agent_present(i) && !world.done[i]) {
        active.push_back(i);
      }
    }
    if (!active.empty() && bg != nullptr) {
      const int K = bg->spec().n_actions;
      const int in_dim = bg->spec().layout.total_dim();
      const int B = static_cast<int>(active.size());
      in_batch.resize(static_cast<std::size_t>(B) * in_dim);
      for (int b = 0; b < B; ++b) {
        std::vector<double> feats =
            bg->spec().input_is_context
                ? build_global_context(world, active[b], scn, config).features
                : build_observation(world, active[b], scn, config, false).features;
        std::copy(feats.begin(), feats.end(), in_batch.begin() + static_cast<long>(b) * in_dim);
      }
      logits.resize(static_cast<std::size_t>(B) * K);
      bg->forward(in_batch.data(), B, cache, false, 0, logits.data(), nullptr);
      lp.resize(K);
      Rng rng(derive_seed(cell_seed, 0x6267ULL, policy_step));
      for (int b = 0; b < B; ++b) {
        log_softmax(logits.data() + static_cast<long>(b) * K, K, lp.data());
        CategoricalDist d;
        d.log_probs = lp;
        actions.tokens[active[b]] = d.sample(rng);
      }
    }

    trace.clear();
    step(world, actions, vocab, scn, config, &trace);
    for (const auto& snap : trace) {
      rollout.poses.push_back(snap.agents[ego].pose);
      rollout.collided.push_back(snap.collided[ego]);
      rollout.offroad.push_back(snap.offroad[ego]);
      std::vector<AgentState> others;
      for (int i = 0; i < scn.num_agents(); ++i) {
        if (i != ego && snap.present[i]) others.push_back(snap.agents[i]);
      }
      rollout.ttc.push_back(ttc_estimate(snap.agents[ego], others));
    }
    ++policy_step;
  }

  PdmBreakdown pdm = pdm_score_detail(rollout, route, log_arc, weights, config.dt);
  cell.ok = true;
  cell.score = pdm.score;
  cell.progress = pdm.progress;
  cell.ttc_fraction = pdm.ttc_fraction;
  cell.comfort = pdm.comfort;
  cell.collision_gate = pdm.collision_gate;
  cell.offroad_gate = pdm.offroad_gate;
  return cell;
}

}  // namespace

bool ScoreMatrix::all_cells_present() const {
  for (const auto& p : cells) {
    for (const auto& s : p) {
      for (const auto& c : s) {
        if (!c.ok && c.error.empty()) return false;
      }
    }
  }
  return true;
}

void ScoreMatrix::write_csv(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write score matrix: " + path);
  out << "planner,strategy,scenario,ok,score,progress,ttc,comfort,collision_gate,offroad_gate,error\n";
  out.precision(17);
  for (std::size_t p = 0; p < planner_names.size(); ++p) {
    for (std::size_t s = 0; s < strategy_names.size(); ++s) {
      for (std::size_t c = 0; c < scenario_ids.size(); ++c) {
        const CellResult& cell = cells[p][s][c];
        out << planner_names[p] << ',' << strategy_names[s] << ',' << scenario_ids[c] << ','
            << (cell.ok ? 1 : 0) << ',' << cell.score << ',' << cell.progress << ','
            << cell.ttc_fraction << ',' << cell.comfort << ',' << (cell.collision_gate ? 1 : 0)
            << ',' << (cell.offroad_gate ? 1 : 0) << ',' << cell.error << "\n";
      }
    }
  }
}

ScoreMatrix planner_eval_matrix(const std::vector<PlannerVariant>& planners,
                                const std::vector<Scenario>& scenarios,
                                const std::vector<EvalStrategy>& strategies,
                                const TokenVocab& vocab, const SimConfig& config,
                                const PdmWeights& weights, std::uint64_t seed) {
  ScoreMatrix m;
  for (const auto& p : planners) m.planner_names.push_back(p.name);
  for (const auto& s : strategies) m.strategy_names.push_back(s.name);
  for (const auto& s : scenarios) m.scenario_ids.push_back(s.id);
  const int P = static_cast<int>(planners.size());
  const int S = static_cast<int>(strategies.size());
  const int C = static_cast<int>(scenarios.size());
  m.cells.assign(P, std::vector<std::vector<CellResult>>(S, std::vector<CellResult>(C)));

  const int total = P * S * C;
#ifdef _OPENMP
#pragma omp parallel for schedule(dynamic) num_threads(max_workers())
#endif
  for (int idx = 0; idx < total; ++idx) {
    const int p = idx / (S * C);
    const int s = (idx / C) % S;
    const int c = idx % C;
    CellResult cell;
    try {
      cell = run_cell(planners[p], scenarios[c], strategies[s], vocab, config, weights,
                      derive_seed(seed, 0x63656c6cULL, p, s, c));
    } catch (const std::exception& e) {
      cell.ok = false;
      cell.error = e.what();
    }
    m.cells[p][s][c] = cell;
  }
  return m;
}

std::optional<double> pearson(const std::vector<double>& x, const std::vector<double>& y) {
  const std::size_t n = x.size();
  if (n != y.size() || n < 2) return std::nullopt;
  double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
  double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (sxx <= 0.0 || syy <= 0.0) return std::nullopt;  // zero variance: undefined
  return sxy / std::sqrt(sxx * syy);
}

namespace {

std::vector<double> average_ranks(const std::vector<double>& v) {
  const std::size_t n = v.size();
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](int a, int b) { return v[a] < v[b]; });
  std::vector<double> ranks(n, 0.0);
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j + 1 < n && v[order[j + 1]] == v[order[i]]) ++j;
    double avg = 0.5 * (i + j) + 1.0;  // ranks are 1-based, ties averaged
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = avg;
    i = j + 1;
  }
  return ranks;
}

}  // namespace

std::optional<double> spearman(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size() || x.size() < 2) return std::nullopt;
  return pearson(average_ranks(x), average_ranks(y));
}

CorrelationResult correlation_stats(const ScoreMatrix& matrix, int strategy_a, int strategy_b) {
  const int P = static_cast<int>(matrix.planner_names.size());
  const int C = static_cast<int>(matrix.scenario_ids.size());
  std::vector<std::vector<double>> a_vals(4), b_vals(4);
  int n_complete = 0;
  for (int p = 0; p < P; ++p) {
    bool complete = true;
    double a_acc[4] = {0, 0, 0, 0}, b_acc[4] = {0, 0, 0, 0};
    for (int c = 0; c < C; ++c) {
      const CellResult& ca = matrix.cells[p][strategy_a][c];
      const CellResult& cb = matrix.cells[p][strategy_b][c];
      if (!ca.ok || !cb.ok) {
        complete = false;
        break;
      }
      const double av[4] = {ca.score, ca.progress, ca.ttc_fraction, ca.comfort};
      const double bv[4] = {cb.score, cb.progress, cb.ttc_fraction, cb.comfort};
      for (int k = 0; k < 4; ++k) {
        a_acc[k] += av[k];
        b_acc[k] += bv[k];
      }
    }
    if (!complete) continue;
    ++n_complete;
    for (int k = 0; k < 4; ++k) {
      a_vals[k].push_back(a_acc[k] / C);
      b_vals[k].push_back(b_acc[k] / C);
    }
  }
  if (n_complete < 3) throw InvariantError("correlation_stats: need >= 3 complete planners");

  CorrelationResult res;
  res.n_planners = n_complete;
  const char* names[4] = {"pdm_score", "progress", "ttc", "comfort"};
  for (int k = 0; k < 4; ++k) {
    CorrelationEntry e;
    e.metric = names[k];
    e.pearson = pearson(a_vals[k], b_vals[k]);
    e.spearman = spearman(a_vals[k], b_vals[k]);
    res.entries.push_back(std::move(e));
  }
  return res;
}

void CorrelationResult::write_csv(const std::string& path, const std::string& a,
                                  const std::string& b) const {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write correlation csv: " + path);
  out << "strategy_a,strategy_b,metric,pearson,spearman,n_planners\n";
  out.precision(17);
  for (const auto& e : entries) {
    out << a << ',' << b << ',' << e.metric << ',';
    if (e.pearson) {
      out << *e.pearson;
    } else {
      out << "undefined";
    }
    out << ',';
    if (e.spearman) {
      out << *e.spearman;
    } else {
      out << "undefined";
    }
    out << ',' << n_planners << "\n";
  }
}

namespace {

void run_episode(const ControllerRef& controller, const Scenario& scenario,
                 const TokenVocab& vocab, const SimConfig& config, std::uint64_t seed) {
  const LateFusionNet& net = *controller.net;
  const int K = net.spec().n_actions;
  const int in_dim = net.spec().layout.total_dim();
  WorldState world = reset(scenario, config);
  FusionCache cache;
  std::vector<double> in_batch, logits, lp(K);
  int policy_step = 0;
  while (!episode_over(world, scenario)) {
    std::vector<int> active;
    for (int i = 0; i < scenario.num_agents(); ++i) {
      if (scenario.controlled[i] && world.agent_present(i) && !world.done[i]) active.push_back(i);
    }
    JointActions actions;
    actions.tokens.assign(scenario.num_agents(), -1);
    if (!active.empty()) {
      const int B = static_cast<int>(active.size());
      in_batch.resize(static_cast<std::size_t>(B) * in_dim);
      for (int b = 0; b < B; ++b) {
        std::vector<double> feats =
            net.spec().input_is_context
                ? build_global_context(world, active[b], scenario, config).features
                : build_observation(world, active[b], scenario, config, false).features;
        std::copy(feats.begin(), feats.end(), in_batch.begin() + static_cast<long>(b) * in_dim);
      }
      logits.resize(static_cast<std::size_t>(B) * K);
      net.forward(in_batch.data(), B, cache, false, 0, logits.data(), nullptr);
      Rng rng(derive_seed(seed, 0x657065ULL, policy_step));
      for (int b = 0; b < B; ++b) {
        log_softmax(logits.data() + static_cast<long>(b) * K, K, lp.data());
        CategoricalDist d;
        d.log_probs = lp;
        actions.tokens[active[b]] = controller.argmax ? d.argmax() : d.sample(rng);
      }
    }
    step(world, actions, vocab, scenario, config);
    ++policy_step;
  }
}

}  // namespace

BenchResult throughput_bench(const ControllerRef& controller, const std::string& name,
                             const std::vector<Scenario>& scenarios, const TokenVocab& vocab,
                             const SimConfig& config, int n_worlds, int episodes_per_world,
                             const std::vector<std::uint64_t>& seeds) {
  if (seeds.size() < 3) throw InvariantError("throughput_bench: need >= 3 seeds");
  if (scenarios.empty()) throw InvariantError("throughput_bench: no scenarios");

  BenchResult res;
  res.controller_name = name;
  res.n_worlds = n_worlds;
  res.episodes_per_seed = n_worlds * episodes_per_world;
  res.seeds = seeds;
  res.policy_hz = static_cast<int>(std::lround(1.0 / (config.dt * config.policy_every)));
  double agents_sum = 0.0;
  for (const auto& s : scenarios) agents_sum += s.num_agents();
  res.mean_agents = agents_sum / scenarios.size();

  auto run_pass = [&](std::uint64_t seed) {
    const int episodes = n_worlds * episodes_per_world;
#ifdef _OPENMP
#pragma omp parallel for schedule(dynamic) num_threads(max_workers())
#endif
    for (int e = 0; e < episodes; ++e) {
      const Scenario& scn = scenarios[e % scenarios.size()];
      run_episode(controller, scn, vocab, config, derive_seed(seed, 0x62656eULL, e));
    }
  };

  std::vector<double> rates;
  double total_agent_steps = 0.0, total_elapsed = 0.0;
  for (std::size_t si = 0; si < seeds.size(); ++si) {
    run_pass(derive_seed(seeds[si], 0x7761726dULL));  // warmup, excluded
    auto t0 = std::chrono::steady_clock::now();
    run_pass(seeds[si]);
    auto t1 = std::chrono::steady_clock::now();
    double elapsed = std::chrono::duration<double>(t1 - t0).count();
    if (!(elapsed > 0.0)) throw InvariantError("throughput_bench: timer anomaly");
    const int episodes = n_worlds * episodes_per_world;
    rates.push_back(episodes / elapsed);
    double agent_steps = 0.0;
    for (int e = 0; e < episodes; ++e) {
      const Scenario& scn = scenarios[e % scenarios.size()];
      agent_steps += static_cast<double>(scn.num_agents()) * scn.horizon_steps;
    }
    total_agent_steps += agent_steps;
    total_elapsed += elapsed;
  }

  double mean = std::accumulate(rates.begin(), rates.end(), 0.0) / rates.size();
  double var = 0.0;
  for (double r : rates) var += (r - mean) * (r - mean);
  res.scenarios_per_sec_mean = mean;
  res.scenarios_per_sec_std = std::sqrt(var / rates.size());
  res.agent_steps_per_sec = total_agent_steps / total_elapsed;
  return res;
}

std::string BenchResult::to_json() const {
  nlohmann::ordered_json j;
  j["schema_version"] = 1;
  j["controller"] = controller_name;
  j["scenarios_per_sec"] = {{"mean", scenarios_per_sec_mean}, {"std", scenarios_per_sec_std}};
  j["agent_steps_per_sec"] = agent_steps_per_sec;
  j["config"] = {{"n_worlds", n_worlds},
                 {"episodes_per_seed", episodes_per_seed},
                 {"mean_agents", mean_agents},
                 {"policy_hz", policy_hz},
                 {"seeds", seeds}};
  return j.dump(1);
}

}  // namespace tsim
