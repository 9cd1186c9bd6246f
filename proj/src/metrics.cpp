#include "tsim/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <set>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "json.hpp"
#include "tsim/common.hpp"

namespace tsim {

std::vector<FeatureSpec> default_feature_specs() {
  using FE = FeatureExtractor;
  using FC = FeatureCategory;
  return {
      {"speed", FE::speed, FC::kinematic, 0.0, 30.0, 20, 1e-3},
      {"accel", FE::accel_mag, FC::kinematic, -8.0, 8.0, 16, 1e-3},
      {"yaw_rate", FE::yaw_rate, FC::kinematic, -1.0, 1.0, 16, 1e-3},
      {"nearest_dist", FE::nearest_agent_dist, FC::interactive, 0.0, 50.0, 20, 1e-3},
      {"collision", FE::collision_flag, FC::interactive, -0.5, 1.5, 2, 1e-3},
      {"dist_to_edge", FE::dist_to_road_edge, FC::map, 0.0, 25.0, 16, 1e-3},
      {"offroad", FE::offroad_flag, FC::map, -0.5, 1.5, 2, 1e-3},
  };
}

std::vector<double> extract_feature_series(const FeatureSpec& spec, const FeatureTrajectory& t) {
  const auto& poses = *t.poses;
  const int horizon = static_cast<int>(poses.size()) - 1;
  const double nan = std::numeric_limits<double>::quiet_NaN();
  std::vector<double> out(horizon, nan);

  auto speed_at = [&](int i) {
    return std::hypot(poses[i].x - poses[i - 1].x, poses[i].y - poses[i - 1].y) / t.dt;
  };

  for (int i = 1; i <= horizon; ++i) {
    switch (spec.extractor) {
      case FeatureExtractor::speed:
        out[i - 1] = speed_at(i);
        break;
      case FeatureExtractor::accel_mag:
        if (i >= 2) out[i - 1] = (speed_at(i) - speed_at(i - 1)) / t.dt;
        break;
      case FeatureExtractor::yaw_rate:
        out[i - 1] = normalize_angle(poses[i].heading - poses[i - 1].heading) / t.dt;
        break;
      case FeatureExtractor::nearest_agent_dist: {
        double best = std::numeric_limits<double>::infinity();
        for (const Vec2& p : (*t.others)[i]) {
          best = std::min(best, (p - poses[i].position()).norm());
        }
        out[i - 1] = best;
        break;
      }
      case FeatureExtractor::collision_flag:
        out[i - 1] = (*t.collided)[i - 1] ? 1.0 : 0.0;
        break;
      case FeatureExtractor::dist_to_road_edge: {
        double best = std::numeric_limits<double>::infinity();
        for (const auto& poly : t.road_graph->road_edges) {
          best = std::min(best, polyline_distance(poly, poses[i].position()));
        }
        out[i - 1] = best;
        break;
      }
      case FeatureExtractor::offroad_flag:
        out[i - 1] = (*t.offroad)[i - 1] ? 1.0 : 0.0;
        break;
    }
  }
  return out;
}

RolloutSet simulate_rollout_set(const ControllerRef& controller, const Scenario& scenario,
                                const TokenVocab& vocab, const SimConfig& config,
                                const std::vector<std::uint64_t>& seeds) {
  if (seeds.size() < 2) throw InvariantError("simulate_rollout_set: need S >= 2 samples");
  std::set<std::uint64_t> uniq(seeds.begin(), seeds.end());
  if (uniq.size() != seeds.size()) {
    throw InvariantError("simulate_rollout_set: seeds must be distinct");
  }
  if (controller.net == nullptr || controller.net->spec().n_actions != vocab.size()) {
    throw InvariantError("simulate_rollout_set: controller vocabulary mismatch");
  }

  const int S = static_cast<int>(seeds.size());
  const int n = scenario.num_agents();
  RolloutSet set;
  set.seeds = seeds;
  set.samples.resize(S);

#ifdef _OPENMP
#pragma omp parallel for schedule(dynamic) num_threads(max_workers())
#endif
  for (int s = 0; s < S; ++s) {
    const LateFusionNet& net = *controller.net;
    const int K = net.spec().n_actions;
    const int in_dim = net.spec().layout.total_dim();
    WorldState world = reset(scenario, config);
    WorldRollout& wr = set.samples[s];
    wr.agents.resize(n);
    for (int i = 0; i < n; ++i) {
      wr.agents[i].poses.push_back(world.agents[i].pose);
      wr.agents[i].speeds.push_back(world.agents[i].speed);
      wr.agents[i].valid.push_back(world.agent_present(i) ? 1 : 0);
    }

    FusionCache cache;
    std::vector<double> in_batch, logits, lp(K);
    std::vector<SubstepSnapshot> trace;
    int policy_step = 0;
    while (!episode_over(world, scenario)) {
      std::vector<int> active;
      for (int i = 0; i < n; ++i) {
        if (scenario.controlled[i] && world.agent_present(i) && !world.done[i]) active.push_back(i);
      }
      JointActions actions;
      actions.tokens.assign(n, -1);
      const int B = static_cast<int>(active.size());
      if (B > 0) {
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
        Rng rng(derive_seed(seeds[s], 0x726f6cULL, policy_step));
        for (int b = 0; b < B; ++b) {
          log_softmax(logits.data() + static_cast<long>(b) * K, K, lp.data());
          CategoricalDist d;
          d.log_probs.assign(lp.begin(), lp.end());
          actions.tokens[active[b]] = controller.argmax ? d.argmax() : d.sample(rng);
        }
      }
      trace.clear();
      step(world, actions, vocab, scenario, config, &trace);
      for (const auto& snap : trace) {
        for (int i = 0; i < n; ++i) {
          wr.agents[i].poses.push_back(snap.agents[i].pose);
          wr.agents[i].speeds.push_back(snap.agents[i].speed);
          wr.agents[i].valid.push_back(snap.present[i]);
          wr.agents[i].collided.push_back(snap.collided[i]);
          wr.agents[i].offroad.push_back(snap.offroad[i]);
          if (snap.goal_now[i]) wr.agents[i].goal_reached = true;
        }
      }
      ++policy_step;
    }
  }
  return set;
}

namespace {

// Ground-truth trajectory of one agent over the simulated window, with
// infraction flags recomputed by the same predicates the simulator uses.
struct GtWindow {
  std::vector<Pose2> poses;
  std::vector<std::uint8_t> valid;
  std::vector<std::uint8_t> collided, offroad;
};

GtWindow gt_window(const Scenario& gt, int agent) {
  GtWindow w;
  const int lo = gt.init_step, hi = gt.init_step + gt.horizon_steps;
  for (int t = lo; t <= hi; ++t) {
    const AgentState& st = gt.tracks[agent].states[t];
    w.poses.push_back(st.pose);
    w.valid.push_back(st.valid ? 1 : 0);
    if (t > lo) {
      bool col = false;
      if (st.valid) {
        for (int b = 0; b < gt.num_agents(); ++b) {
          if (b == agent || !gt.tracks[b].states[t].valid) continue;
          if (collision_check(st, gt.tracks[b].states[t])) {
            col = true;
            break;
          }
        }
      }
      w.collided.push_back(col ? 1 : 0);
      w.offroad.push_back(st.valid && offroad_check(st, gt.road_graph) ? 1 : 0);
    }
  }
  return w;
}

std::vector<std::vector<Vec2>> gt_other_positions(const Scenario& gt, int agent) {
  const int lo = gt.init_step, hi = gt.init_step + gt.horizon_steps;
  std::vector<std::vector<Vec2>> others(hi - lo + 1);
  for (int t = lo; t <= hi; ++t) {
    for (int b = 0; b < gt.num_agents(); ++b) {
      if (b == agent || !gt.tracks[b].states[t].valid) continue;
      others[t - lo].push_back(gt.tracks[b].states[t].pose.position());
    }
  }
  return others;
}

std::vector<std::vector<Vec2>> rollout_other_positions(const WorldRollout& wr, int agent) {
  const int T = static_cast<int>(wr.agents[agent].poses.size());
  std::vector<std::vector<Vec2>> others(T);
  for (int t = 0; t < T; ++t) {
    for (std::size_t b = 0; b < wr.agents.size(); ++b) {
      if (static_cast<int>(b) == agent || !wr.agents[b].valid[t]) continue;
      others[t].push_back(wr.agents[b].poses[t].position());
    }
  }
  return others;
}

int bin_of(double v, const FeatureSpec& spec, long& clamped) {
  const double w = (spec.bin_hi - spec.bin_lo) / spec.n_bins;
  if (v < spec.bin_lo) {
    ++clamped;
    return 0;
  }
  if (v > spec.bin_hi) {
    ++clamped;
    return spec.n_bins - 1;
  }
  int b = static_cast<int>((v - spec.bin_lo) / w);
  return std::min(b, spec.n_bins - 1);
}

}  // namespace

RealismReport realism_score(const RolloutSet& rollouts, const Scenario& gt,
                            const std::vector<FeatureSpec>& specs) {
  if (specs.empty()) throw InvariantError("realism_score: no feature specs");
  if (rollouts.samples.empty()) throw InvariantError("realism_score: empty rollout set");
  const int S = static_cast<int>(rollouts.samples.size());
  const int horizon = gt.horizon_steps;
  for (const auto& wr : rollouts.samples) {
    if (static_cast<int>(wr.agents.front().poses.size()) != horizon + 1) {
      throw InvariantError("realism_score: rollout/GT horizon mismatch");
    }
  }

  RealismReport report;
  for (int a = 0; a < gt.num_agents(); ++a) {
    if (gt.controlled[a]) report.target_agents.push_back(a);
  }
  for (const auto& s : specs) report.feature_names.push_back(s.name);

  report.per_agent.assign(report.target_agents.size(),
                          std::vector<double>(specs.size(), std::numeric_limits<double>::quiet_NaN()));

  for (std::size_t ai = 0; ai < report.target_agents.size(); ++ai) {
    const int a = report.target_agents[ai];
    GtWindow gw = gt_window(gt, a);
    auto gt_others = gt_other_positions(gt, a);
    FeatureTrajectory gt_traj{&gw.poses, &gw.collided, &gw.offroad, &gt_others, &gt.road_graph,
                              kSimDt};

    std::vector<std::vector<std::vector<double>>> sample_series(specs.size());
    for (std::size_t j = 0; j < specs.size(); ++j) sample_series[j].resize(S);
    for (int s = 0; s < S; ++s) {
      const WorldRollout& wr = rollouts.samples[s];
      auto ro_others = rollout_other_positions(wr, a);
      FeatureTrajectory traj{&wr.agents[a].poses, &wr.agents[a].collided, &wr.agents[a].offroad,
                             &ro_others, &gt.road_graph, kSimDt};
      for (std::size_t j = 0; j < specs.size(); ++j) {
        sample_series[j][s] = extract_feature_series(specs[j], traj);
      }
    }

    for (std::size_t j = 0; j < specs.size(); ++j) {
      const FeatureSpec& spec = specs[j];
      std::vector<double> gt_series = extract_feature_series(spec, gt_traj);
      double nll_sum = 0.0;
      int n_valid = 0;
      for (int i = 1; i <= horizon; ++i) {
        // Step validity: GT valid at the step and its differencing window.
        bool ok = gw.valid[i] && gw.valid[i - 1];
        if (spec.extractor == FeatureExtractor::accel_mag) ok = ok && i >= 2 && gw.valid[i - 2];
        if (!ok) continue;
        double gt_v = gt_series[i - 1];
        if (std::isnan(gt_v)) continue;

        std::vector<int> counts(spec.n_bins, 0);
        for (int s = 0; s < S; ++s) {
          double v = sample_series[j][s][i - 1];
          if (std::isnan(v)) continue;
          counts[bin_of(v, spec, report.out_of_range_values)] += 1;
        }
        int gt_bin = bin_of(gt_v, spec, report.out_of_range_values);
        double p = (counts[gt_bin] + spec.epsilon) / (S + spec.epsilon * spec.n_bins);
        nll_sum += -std::log(p);
        ++n_valid;
      }
      if (n_valid > 0) {
        report.per_agent[ai][j] = std::exp(-nll_sum / n_valid);
      }
    }
  }

  report.per_feature.assign(specs.size(), std::numeric_limits<double>::quiet_NaN());
  for (std::size_t j = 0; j < specs.size(); ++j) {
    double sum = 0.0;
    int cnt = 0;
    for (std::size_t ai = 0; ai < report.target_agents.size(); ++ai) {
      if (!std::isnan(report.per_agent[ai][j])) {
        sum += report.per_agent[ai][j];
        ++cnt;
      }
    }
    if (cnt > 0) report.per_feature[j] = sum / cnt;
  }

  double cat_sum[3] = {0.0, 0.0, 0.0};
  int cat_cnt[3] = {0, 0, 0};
  for (std::size_t j = 0; j < specs.size(); ++j) {
    if (std::isnan(report.per_feature[j])) continue;
    int c = static_cast<int>(specs[j].category);
    cat_sum[c] += report.per_feature[j];
    cat_cnt[c] += 1;
  }
  report.kinematic = cat_cnt[0] > 0 ? cat_sum[0] / cat_cnt[0] : 0.0;
  report.interactive = cat_cnt[1] > 0 ? cat_sum[1] / cat_cnt[1] : 0.0;
  report.map = cat_cnt[2] > 0 ? cat_sum[2] / cat_cnt[2] : 0.0;
  report.composite = (report.kinematic + report.interactive + report.map) / 3.0;

  MinAdeResult ade = min_ade(rollouts, gt);
  report.min_ade = ade.value;
  InfractionRates rates = infraction_rates(rollouts, gt);
  report.collision_rate = rates.collision;
  report.offroad_rate = rates.offroad;
  report.goal_rate = rates.goal;
  return report;
}

MinAdeResult min_ade(const RolloutSet& rollouts, const Scenario& gt) {
  MinAdeResult res;
  const int horizon = gt.horizon_steps;
  double total = 0.0;
  int counted = 0;
  for (int a = 0; a < gt.num_agents(); ++a) {
    if (!gt.controlled[a]) continue;
    double best = std::numeric_limits<double>::infinity();
    int n_valid = 0;
    for (const auto& wr : rollouts.samples) {
      double err = 0.0;
      n_valid = 0;
      for (int i = 1; i <= horizon; ++i) {
        const AgentState& st = gt.tracks[a].states[gt.init_step + i];
        if (!st.valid) continue;
        err += (wr.agents[a].poses[i].position() - st.pose.position()).norm();
        ++n_valid;
      }
      if (n_valid > 0) best = std::min(best, err / n_valid);
    }
    if (n_valid == 0 || !std::isfinite(best)) {
      res.excluded_agents += 1;
      continue;
    }
    total += best;
    ++counted;
  }
  res.value = counted > 0 ? total / counted : 0.0;
  return res;
}

InfractionRates infraction_rates(const RolloutSet& rollouts, const Scenario& gt) {
  InfractionRates rates;
  int pairs = 0, coll = 0, off = 0, goal = 0;
  for (int a = 0; a < gt.num_agents(); ++a) {
    if (!gt.controlled[a]) continue;
    for (const auto& wr : rollouts.samples) {
      ++pairs;
      const AgentRollout& ar = wr.agents[a];
      bool c = std::any_of(ar.collided.begin(), ar.collided.end(), [](std::uint8_t v) { return v; });
      bool o = std::any_of(ar.offroad.begin(), ar.offroad.end(), [](std::uint8_t v) { return v; });
      coll += c;
      off += o;
      goal += ar.goal_reached;
    }
  }
  if (pairs > 0) {
    rates.collision = static_cast<double>(coll) / pairs;
    rates.offroad = static_cast<double>(off) / pairs;
    rates.goal = static_cast<double>(goal) / pairs;
  }
  return rates;
}

void RealismReport::write_csv(const std::string& scenario_id, const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write realism report: " + path);
  out << "scenario_id,feature,category,score\n";
  out.precision(17);
  const char* cat_names[] = {"kinematic", "interactive", "map"};
  auto specs = default_feature_specs();
  for (std::size_t j = 0; j < feature_names.size(); ++j) {
    const char* cat = j < specs.size() ? cat_names[static_cast<int>(specs[j].category)] : "?";
    out << scenario_id << ',' << feature_names[j] << ',' << cat << ',' << per_feature[j] << "\n";
  }
  out << scenario_id << ",composite,summary," << composite << "\n";
  out << scenario_id << ",min_ade,summary," << min_ade << "\n";
  out << scenario_id << ",collision_rate,summary," << collision_rate << "\n";
  out << scenario_id << ",offroad_rate,summary," << offroad_rate << "\n";
  out << scenario_id << ",goal_rate,summary," << goal_rate << "\n";
}

std::string RealismReport::to_json(const std::string& scenario_id) const {
  nlohmann::ordered_json j;
  j["schema_version"] = 1;
  j["scenario_id"] = scenario_id;
  j["composite"] = composite;
  j["kinematic"] = kinematic;
  j["interactive"] = interactive;
  j["map"] = map;
  j["min_ade"] = min_ade;
  j["collision_rate"] = collision_rate;
  j["offroad_rate"] = offroad_rate;
  j["goal_rate"] = goal_rate;
  j["out_of_range_values"] = out_of_range_values;
  j["features"] = nlohmann::ordered_json::object();
  for (std::size_t f = 0; f < feature_names.size(); ++f) j["features"][feature_names[f]] = per_feature[f];
  j["per_agent"] = nlohmann::ordered_json::array();
  for (std::size_t ai = 0; ai < target_agents.size(); ++ai) {
    nlohmann::ordered_json row;
    row["agent"] = target_agents[ai];
    for (std::size_t f = 0; f < feature_names.size(); ++f) {
      row[feature_names[f]] = per_agent[ai][f];
    }
    j["per_agent"].push_back(std::move(row));
  }
  return j.dump(1);
}

}  // namespace tsim
