#pragma once

#include <optional>
#include <string>
#include <vector>

#include "tsim/geometry.hpp"
#include "tsim/scenario.hpp"

namespace tsim {

struct IdmParams {
  double desired_speed = 30.0;    // v0, m/s
  double min_spacing = 2.0;       // s0, m
  double time_headway = 1.5;      // T, s
  double max_accel = 2.0;         // a_max, m/s^2
  double comfort_decel = 3.0;     // b_comf, m/s^2
  double delta = 4.0;             // acceleration exponent
  double aggressiveness = 0.5;    // in [0, 1]
  double perception_range = 50.0; // m
};

struct FrenetParams {
  double w_lateral = 10.0;
  double w_velocity = 1.0;
  double w_acceleration = 1.0;
  double w_progress = 1.0;
  double w_jerk = 0.5;
  double collision_penalty = 1000.0;
  int n_lateral = 15;   // d samples
  int n_velocity = 7;   // v samples
  int n_time = 5;       // t samples
  double lateral_span = 4.0;    // m, full width of the sampled d_target grid
  double velocity_span = 10.0;  // m/s, width of the sampled v_target grid
  int horizon_steps = 20;       // planner steps of 0.1 s
  double v_min = 0.0;
  double v_max = 30.0;
};

struct PdmWeights {
  double w_progress = 5.0;
  double w_ttc = 5.0;
  double w_comfort = 2.0;
  double ttc_threshold = 1.5;     // s
  double comfort_accel = 4.0;     // m/s^2
  double comfort_jerk = 10.0;     // m/s^3
};

// Minimal world view a planner needs; decoupled from the simulator types.
struct PlannerView {
  AgentState ego;
  std::vector<AgentState> others;  // valid agents only, ego excluded
};

// Aggressiveness scaling: table parameters are taken at the 0.5 midpoint, so
// a_eff = a_max * (0.5 + agg) and T_eff = T * (1.5 - agg); a variant at its
// listed aggressiveness reproduces its listed a_max and T exactly.
double idm_effective_accel(const IdmParams& p);
double idm_effective_headway(const IdmParams& p);

// IDM acceleration law. gap and lead_speed are ignored when has_leader is
// false (free road). Result clipped to [-2*b_comf, a_eff].
double idm_acceleration(const IdmParams& p, double speed, bool has_leader,
                        double gap, double lead_speed);

// One 0.1 s step: IDM longitudinal control against the nearest leader on the
// route + pure-pursuit lateral tracking (5 m lookahead). Stateless; ego speed
// is read from the view.
Pose2 idm_plan(const PlannerView& view, const IdmParams& params,
               std::span<const Vec2> route, double dt = kSimDt);

// Quintic d(t): (x0, v0, a0) at t=0 -> (x1, 0, 0) at t=T. Coefficients c[0..5].
std::array<double, 6> quintic_coeffs(double x0, double v0, double a0, double x1,
                                     double v1, double a1, double T);
// Quartic s(t): (x0, v0, a0) at t=0 -> end velocity v1, end accel a1 at t=T.
std::array<double, 5> quartic_coeffs(double x0, double v0, double a0, double v1,
                                     double a1, double T);
double poly_eval(std::span<const double> c, double t);
double poly_eval_d1(std::span<const double> c, double t);
double poly_eval_d2(std::span<const double> c, double t);
double poly_eval_d3(std::span<const double> c, double t);

struct FrenetCandidate {
  double cost = 0.0;
  double accel_sq = 0.0;  // integral of squared acceleration
  double jerk_sq = 0.0;   // integral of squared jerk
  double d_end = 0.0;
  double v_end = 0.0;
  double progress = 0.0;
  bool collides = false;
  Pose2 first_pose;  // pose one sim step along the candidate
};

// The full scored candidate set, in deterministic (time, lateral, velocity)
// order; exposed for tests and debugging.
std::vector<FrenetCandidate> frenet_candidates(const PlannerView& view,
                                               const FrenetParams& params,
                                               std::span<const Vec2> route, double dt = kSimDt);

// Samples quintic lateral x quartic longitudinal candidates in the route
// frame, scores them with the weighted cost, and returns the pose one sim
// step along the cheapest candidate (ties by candidate order). All-colliding
// candidate sets fall back to a max-brake straight candidate.
Pose2 frenet_plan(const PlannerView& view, const FrenetParams& params,
                  std::span<const Vec2> route, double dt = kSimDt);

struct EgoRollout {
  std::vector<Pose2> poses;          // one per sim step, including the start
  std::vector<std::uint8_t> collided;  // per step after the first
  std::vector<std::uint8_t> offroad;
  std::vector<double> ttc;  // time to collision per step, inf when clear
};

struct PdmBreakdown {
  double score = 0.0;
  double progress = 0.0;
  double ttc_fraction = 0.0;
  double comfort = 0.0;
  bool collision_gate = false;  // true = gate tripped (score forced to 0)
  bool offroad_gate = false;
};

// PDM-style score: hard no-collision / never-offroad gates multiply a
// weighted mean of progress, TTC compliance, and comfort.
PdmBreakdown pdm_score_detail(const EgoRollout& rollout, std::span<const Vec2> route,
                              double logged_arc_length, const PdmWeights& weights,
                              double dt = kSimDt);
double pdm_score(const EgoRollout& rollout, std::span<const Vec2> route,
                 double logged_arc_length, const PdmWeights& weights,
                 double dt = kSimDt);

struct IdmPreset {
  std::string name;
  std::string description;
  IdmParams params;
};

struct FrenetPreset {
  std::string name;
  std::string description;
  FrenetParams params;
};

struct PlannerPresets {
  std::vector<IdmPreset> idm;
  std::vector<FrenetPreset> frenet;
};

PlannerPresets builtin_planner_presets();
PlannerPresets load_planner_presets(const std::string& path);
void save_planner_presets(const PlannerPresets& presets, const std::string& path);

}  // namespace tsim
