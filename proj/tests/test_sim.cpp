#include <cmath>

#include "doctest.h"
#include "tsim/common.hpp"
#include "tsim/policy.hpp"
#include "tsim/sim.hpp"
#include "tsim/synthetic.hpp"
#include "tsim/tokenizer.hpp"
#include "tsim/trainer.hpp"

using namespace tsim;

namespace {

TokenVocab tiny_vocab() {
  TokenVocab v;
  v.radius = 0.05;
  v.horizon = 2;
  auto add = [&](double dx, double dy, double dh) {
    MotionSegment s;
    s.rel_poses = {{dx, dy, dh}, {dx, dy, dh}};
    v.tokens.push_back(s);
  };
  add(0, 0, 0);         // stop
  add(1.0, 0, 0);       // 10 m/s straight
  add(0.5, 0, 0);       // 5 m/s straight
  add(1.0, 0.02, 0.02); // gentle left
  add(1.0, -0.02, -0.02);
  return v;
}

Scenario rotate_scenario(const Scenario& s, double angle, Vec2 shift) {
  Scenario out = s;
  double c = std::cos(angle), sn = std::sin(angle);
  auto rot_pt = [&](Vec2 p) { return Vec2{c * p.x - sn * p.y + shift.x, sn * p.x + c * p.y + shift.y}; };
  auto rot_pose = [&](Pose2 p) {
    Vec2 xy = rot_pt({p.x, p.y});
    return Pose2{xy.x, xy.y, normalize_angle(p.heading + angle)};
  };
  for (auto* polys : {&out.road_graph.lane_centerlines, &out.road_graph.road_edges,
                      &out.road_graph.drivable_areas}) {
    for (auto& poly : *polys) {
      for (auto& p : poly) p = rot_pt(p);
    }
  }
  for (auto& tr : out.tracks) {
    for (auto& st : tr.states) st.pose = rot_pose(st.pose);
  }
  for (auto& g : out.goals) g.position = rot_pt(g.position);
  return out;
}

}  // namespace

TEST_CASE("reset is deterministic and validates controlled agents") {
  Scenario s = generate_synthetic_scenario(ScenarioTemplate::straight, 3, 10);
  SimConfig cfg;
  WorldState a = reset(s, cfg);
  WorldState b = reset(s, cfg);
  CHECK(a.step == s.init_step);
  REQUIRE(a.agents.size() == 3);
  for (int i = 0; i < 3; ++i) {
    CHECK(a.agents[i].pose.x == b.agents[i].pose.x);
    CHECK(a.agents[i].pose.y == s.tracks[i].states[s.init_step].pose.y);
    CHECK_FALSE(a.done[i]);
    CHECK(a.cum_events[i].collisions == 0);
  }
  Scenario bad = s;
  bad.tracks[0].states[bad.init_step].valid = false;
  CHECK_THROWS_AS(reset(bad, cfg), InvariantError);
}

TEST_CASE("log replay is bit-exact with zero controlled agents") {
  Scenario s = generate_synthetic_scenario(ScenarioTemplate::intersection, 4, 11);
  std::fill(s.controlled.begin(), s.controlled.end(), 0);
  SimConfig cfg;
  TokenVocab v = tiny_vocab();
  WorldState w = reset(s, cfg);
  JointActions none;
  none.tokens.assign(4, -1);
  while (!episode_over(w, s)) {
    step(w, none, v, s, cfg);
    for (int i = 0; i < 4; ++i) {
      const AgentState& truth = s.tracks[i].states[w.step];
      CHECK(w.agents[i].pose.x == truth.pose.x);
      CHECK(w.agents[i].pose.y == truth.pose.y);
      CHECK(w.agents[i].pose.heading == truth.pose.heading);
      CHECK(w.agents[i].speed == truth.speed);
    }
  }
  CHECK(w.step == s.init_step + s.horizon_steps);
}

TEST_CASE("zero-motion token leaves a lone agent stationary and event free") {
  Scenario s = generate_synthetic_scenario(ScenarioTemplate::straight, 1, 12);
  SimConfig cfg;
  TokenVocab v = tiny_vocab();
  WorldState w = reset(s, cfg);
  Pose2 start = w.agents[0].pose;
  while (!episode_over(w, s)) {
    JointActions a;
    a.tokens = {0};
    StepEvents ev = step(w, a, v, s, cfg);
    CHECK_FALSE(ev.collided[0]);
    CHECK_FALSE(ev.offroad[0]);
    CHECK(w.agents[0].pose.x == start.x);
    CHECK(w.agents[0].pose.y == start.y);
  }
  CHECK(w.cum_events[0].collisions == 0);
  CHECK(w.cum_events[0].offroad_steps == 0);
}

TEST_CASE("head-on collision fires exactly when the offline SAT sweep says so") {
  // Two agents driving toward each other with the straight 10 m/s token.
  Scenario two = generate_synthetic_scenario(ScenarioTemplate::straight, 1, 13);
  two.tracks.push_back(two.tracks[0]);
  two.goals.push_back(two.goals[0]);
  two.controlled.push_back(1);
  AgentTrack& t0 = two.tracks[0];
  AgentTrack& t1 = two.tracks[1];
  for (int t = 0; t < two.total_steps(); ++t) {
    t0.states[t].pose = {100.0, 0.0, 0.0};
    t0.states[t].speed = 10.0;
    t0.states[t].length = 4.0;
    t0.states[t].width = 2.0;
    t1.states[t].pose = {160.0, 0.0, M_PI};
    t1.states[t].speed = 10.0;
    t1.states[t].length = 4.0;
    t1.states[t].width = 2.0;
  }
  two.goals[0].position = {195.0, 0.0};
  two.goals[1].position = {65.0, 0.0};
  two.validate();

  SimConfig cfg;
  TokenVocab v = tiny_vocab();

  // Offline oracle: evolve both poses by the token increments and SAT-test.
  int oracle_step = -1;
  {
    Pose2 a{100.0, 0.0, 0.0}, b{160.0, 0.0, M_PI};
    for (int t = 1; t <= two.horizon_steps; ++t) {
      a = compose(a, v.tokens[1].rel_poses[(t - 1) % 2]);
      b = compose(b, v.tokens[1].rel_poses[(t - 1) % 2]);
      if (obb_overlap(a, 4.0, 2.0, b, 4.0, 2.0)) {
        oracle_step = t;
        break;
      }
    }
  }
  REQUIRE(oracle_step > 0);

  WorldState w = reset(two, cfg);
  int first_collision = -1;
  std::vector<SubstepSnapshot> trace;
  while (!episode_over(w, two) && first_collision < 0) {
    JointActions a;
    a.tokens = {1, 1};
    trace.clear();
    step(w, a, v, two, cfg, &trace);
    for (const auto& snap : trace) {
      if (first_collision < 0 && snap.collided[0]) {
        first_collision = snap.step - two.init_step;
        CHECK(snap.collided[1]);
      }
    }
  }
  CHECK(first_collision == oracle_step);
}

TEST_CASE("planner-mode ego follows provided poses") {
  Scenario s = generate_synthetic_scenario(ScenarioTemplate::straight, 2, 14);
  SimConfig cfg;
  TokenVocab v = tiny_vocab();
  WorldState w = reset(s, cfg);
  JointActions a;
  a.tokens.assign(2, -1);
  a.tokens[1] = 0;
  a.ego_id = 0;
  Pose2 p1 = compose(w.agents[0].pose, {0.8, 0.0, 0.0});
  Pose2 p2 = compose(p1, {0.8, 0.0, 0.0});
  a.ego_poses = {p1, p2};
  step(w, a, v, s, cfg);
  CHECK(w.agents[0].pose.x == doctest::Approx(p2.x));
  CHECK(w.agents[0].speed == doctest::Approx(8.0));
}

TEST_CASE("action validation catches missing and spurious tokens") {
  Scenario s = generate_synthetic_scenario(ScenarioTemplate::straight, 2, 15);
  s.controlled[1] = 0;
  SimConfig cfg;
  TokenVocab v = tiny_vocab();
  WorldState w = reset(s, cfg);
  JointActions missing;
  missing.tokens = {-1, -1};
  CHECK_THROWS_AS(step(w, missing, v, s, cfg), InvariantError);
  JointActions spurious;
  spurious.tokens = {0, 0};  // agent 1 is uncontrolled
  CHECK_THROWS_AS(step(w, spurious, v, s, cfg), InvariantError);
  JointActions oor;
  oor.tokens = {99, -1};
  CHECK_THROWS_AS(step(w, oor, v, s, cfg), InvariantError);
}

TEST_CASE("observation construction") {
  Scenario s = generate_synthetic_scenario(ScenarioTemplate::straight, 1, 16);
  SimConfig cfg;
  FeatureLayout L{cfg.partner_cap, cfg.road_cap};

  SUBCASE("lone agent has an all-zero partner mask") {
    WorldState w = reset(s, cfg);
    Observation o = build_observation(w, 0, s, cfg, false);
    REQUIRE(static_cast<int>(o.features.size()) == L.total_dim());
    for (int p = 0; p < L.n_partner; ++p) CHECK(o.features[L.partner_mask_offset() + p] == 0.0);
    for (double f : o.features) {
      CHECK(f <= 1.0);
      CHECK(f >= -1.0);
    }
  }

  SUBCASE("partner radius boundary is inclusive at 50 m") {
    Scenario two = s;
    two.tracks.push_back(two.tracks[0]);
    two.goals.push_back(two.goals[0]);
    two.controlled.push_back(1);
    for (auto& st : two.tracks[0].states) st.pose = {100.0, 0.0, 0.0};
    for (double dist : {50.0, 50.01}) {
      for (auto& st : two.tracks[1].states) st.pose = {100.0 + dist, 0.0, 0.0};
      two.goals[0].position = two.tracks[0].states.back().pose.position();
      two.goals[1].position = two.tracks[1].states.back().pose.position();
      WorldState w = reset(two, cfg);
      Observation o = build_observation(w, 0, two, cfg, false);
      CHECK(o.features[L.partner_mask_offset()] == (dist <= 50.0 ? 1.0 : 0.0));
    }
  }

  SUBCASE("goal dropout zeroes exactly the goal features") {
    WorldState w = reset(s, cfg);
    Observation with = build_observation(w, 0, s, cfg, false);
    Observation without = build_observation(w, 0, s, cfg, true);
    CHECK(without.features[1] == 0.0);
    CHECK(without.features[2] == 0.0);
    CHECK(without.features[3] == 0.0);
    CHECK(with.features[3] == 1.0);
    for (std::size_t i = 4; i < with.features.size(); ++i) {
      CHECK(with.features[i] == without.features[i]);
    }
  }

  SUBCASE("inactive agent errors") {
    WorldState w = reset(s, cfg);
    CHECK_THROWS_AS(build_observation(w, 2, s, cfg, false), InvariantError);
  }
}

TEST_CASE("observations and contexts are invariant to global rigid motions") {
  Scenario s = generate_synthetic_scenario(ScenarioTemplate::intersection, 4, 17);
  SimConfig cfg;
  Scenario r = rotate_scenario(s, M_PI / 2, {40.0, -25.0});
  WorldState w0 = reset(s, cfg);
  WorldState w1 = reset(r, cfg);
  for (int i = 0; i < 4; ++i) {
    Observation a = build_observation(w0, i, s, cfg, false);
    Observation b = build_observation(w1, i, r, cfg, false);
    REQUIRE(a.features.size() == b.features.size());
    for (std::size_t k = 0; k < a.features.size(); ++k) {
      CHECK(std::abs(a.features[k] - b.features[k]) <= 1e-9);
    }
    GlobalContext ca = build_global_context(w0, i, s, cfg);
    GlobalContext cb = build_global_context(w1, i, r, cfg);
    for (std::size_t k = 0; k < ca.features.size(); ++k) {
      CHECK(std::abs(ca.features[k] - cb.features[k]) <= 1e-9);
    }
  }
}

TEST_CASE("global context sees far partners the observation cannot") {
  Scenario two = generate_synthetic_scenario(ScenarioTemplate::straight, 1, 18);
  two.tracks.push_back(two.tracks[0]);
  two.goals.push_back(two.goals[0]);
  two.controlled.push_back(1);
  for (auto& st : two.tracks[0].states) st.pose = {50.0, 0.0, 0.0};
  for (auto& st : two.tracks[1].states) st.pose = {250.0, 0.0, 0.0};
  two.goals[0].position = {55.0, 0.0};
  two.goals[1].position = {255.0, 0.0};
  SimConfig cfg;
  WorldState w = reset(two, cfg);
  FeatureLayout obs_layout{cfg.partner_cap, cfg.road_cap};
  FeatureLayout ctx_layout{cfg.ref_partner_cap, cfg.road_cap};
  Observation o = build_observation(w, 0, two, cfg, false);
  GlobalContext c = build_global_context(w, 0, two, cfg);
  CHECK(o.features[obs_layout.partner_mask_offset()] == 0.0);
  CHECK(c.features[ctx_layout.partner_mask_offset()] == 1.0);
  // Context goal features are always absent.
  CHECK(c.features[1] == 0.0);
  CHECK(c.features[2] == 0.0);
  CHECK(c.features[3] == 0.0);
}

TEST_CASE("context partner set contains the observation partner set") {
  SimConfig cfg;
  for (int trial = 0; trial < 20; ++trial) {
    Scenario s = generate_synthetic_scenario(
        trial % 2 ? ScenarioTemplate::intersection : ScenarioTemplate::straight, 6, 900 + trial);
    WorldState w = reset(s, cfg);
    FeatureLayout lo{cfg.partner_cap, cfg.road_cap};
    FeatureLayout lc{cfg.ref_partner_cap, cfg.road_cap};
    for (int i = 0; i < s.num_agents(); ++i) {
      Observation o = build_observation(w, i, s, cfg, false);
      GlobalContext c = build_global_context(w, i, s, cfg);
      int no = 0, nc = 0;
      for (int p = 0; p < lo.n_partner; ++p) no += o.features[lo.partner_mask_offset() + p] > 0;
      for (int p = 0; p < lc.n_partner; ++p) nc += c.features[lc.partner_mask_offset() + p] > 0;
      CHECK(nc >= no);
      CHECK(nc == s.num_agents() - 1);  // no radius cutoff at this scale
    }
  }
}

TEST_CASE("event counters are monotone and goals fire once") {
  Scenario s = generate_synthetic_scenario(ScenarioTemplate::straight, 3, 19);
  SimConfig cfg;
  TokenVocab v = tiny_vocab();
  WorldState w = reset(s, cfg);
  int goal_events = 0;
  AgentEvents prev;
  while (!episode_over(w, s)) {
    JointActions a;
    a.tokens = {2, 2, 2};
    StepEvents ev = step(w, a, v, s, cfg);
    goal_events += ev.goal_now[0];
    CHECK(w.cum_events[0].collisions >= prev.collisions);
    CHECK(w.cum_events[0].offroad_steps >= prev.offroad_steps);
    prev = w.cum_events[0];
  }
  CHECK(goal_events <= 1);
}

TEST_CASE("rollout collection is independent of the worker count") {
  Scenario s1 = generate_synthetic_scenario(ScenarioTemplate::straight, 4, 20);
  Scenario s2 = generate_synthetic_scenario(ScenarioTemplate::curve, 3, 21);
  SimConfig cfg;
  cfg.road_cap = 16;
  TokenVocab v = tiny_vocab();
  LateFusionNet policy(policy_spec(cfg, v.size()), 1);
  LateFusionNet ref(reference_spec(cfg, v.size(), false), 2);
  std::vector<const Scenario*> batch = {&s1, &s2, &s1, &s2};

  set_max_workers(1);
  RolloutBuffer b1 = collect_rollouts(policy, ref, batch, v, cfg, RewardConfig{}, 99);
  set_max_workers(8);
  RolloutBuffer b8 = collect_rollouts(policy, ref, batch, v, cfg, RewardConfig{}, 99);
  set_max_workers(0);

  REQUIRE(b1.size() == b8.size());
  CHECK(b1.obs == b8.obs);
  CHECK(b1.actions == b8.actions);
  CHECK(b1.logp_old == b8.logp_old);
  CHECK(b1.values == b8.values);
  CHECK(b1.ref_log_probs == b8.ref_log_probs);
  CHECK(b1.segments == b8.segments);
}
