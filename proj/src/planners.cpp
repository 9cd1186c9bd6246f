#include "tsim/planners.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include "json.hpp"
#include "tsim/common.hpp"

namespace tsim {

double idm_effective_accel(const IdmParams& p) {
  return p.max_accel * (0.5 + p.aggressiveness);
}

double idm_effective_headway(const IdmParams& p) {
  return p.time_headway * (1.5 - p.aggressiveness);
}

double idm_acceleration(const IdmParams& p, double speed, bool has_leader,
                        double gap, double lead_speed) {
  const double a_eff = idm_effective_accel(p);
  const double t_eff = idm_effective_headway(p);
  double accel = a_eff * (1.0 - std::pow(speed / p.desired_speed, p.delta));
  if (has_leader) {
    double dv = speed - lead_speed;
    double s_star = p.min_spacing +
                    std::max(0.0, speed * t_eff + speed * dv / (2.0 * std::sqrt(a_eff * p.comfort_decel)));
    double s = std::max(gap, 0.1);
    accel = a_eff * (1.0 - std::pow(speed / p.desired_speed, p.delta) - (s_star / s) * (s_star / s));
  }
  return std::clamp(accel, -2.0 * p.comfort_decel, a_eff);
}

namespace {

constexpr double kLookahead = 5.0;     // m, pure pursuit
constexpr double kRouteCorridor = 2.5; // m, lateral window for leader detection
constexpr double kMaxCurvature = 0.3;  // 1/m
constexpr double kMaxBrake = 8.0;      // m/s^2, frenet fallback

Pose2 pursue_along_route(const Pose2& pose, double new_speed,
                         std::span<const Vec2> route, double s_ego, double dt) {
  Pose2 out = pose;
  if (new_speed > 1e-9) {
    Pose2 look = pose_at_arclength(route, s_ego + kLookahead);
    double alpha = normalize_angle(std::atan2(look.y - pose.y, look.x - pose.x) - pose.heading);
    double curvature = std::clamp(2.0 * std::sin(alpha) / kLookahead, -kMaxCurvature, kMaxCurvature);
    out.heading = normalize_angle(pose.heading + curvature * new_speed * dt);
  }
  out.x += new_speed * dt * std::cos(out.heading);
  out.y += new_speed * dt * std::sin(out.heading);
  return out;
}

}  // namespace

Pose2 idm_plan(const PlannerView& view, const IdmParams& params,
               std::span<const Vec2> route, double dt) {
  if (route.size() < 2) throw InvariantError("idm_plan: empty route");
  PolylineProjection ego_proj = project_to_polyline(route, view.ego.pose.position());

  bool has_leader = false;
  double gap = 0.0, lead_speed = 0.0, best_ds = std::numeric_limits<double>::infinity();
  for (const AgentState& other : view.others) {
    if (!other.valid) continue;
    PolylineProjection op = project_to_polyline(route, other.pose.position());
    if (op.distance > kRouteCorridor) continue;
    double ds = op.arc_length - ego_proj.arc_length;
    if (ds <= 0.0 || ds > params.perception_range) continue;
    if (ds < best_ds) {
      best_ds = ds;
      has_leader = true;
      gap = ds - 0.5 * (view.ego.length + other.length);
      lead_speed = other.speed * std::cos(other.pose.heading - op.tangent_heading);
    }
  }

  double accel = idm_acceleration(params, view.ego.speed, has_leader, gap, lead_speed);
  double new_speed = std::max(0.0, view.ego.speed + accel * dt);
  return pursue_along_route(view.ego.pose, new_speed, route, ego_proj.arc_length, dt);
}

std::array<double, 6> quintic_coeffs(double x0, double v0, double a0, double x1,
                                     double v1, double a1, double T) {
  std::array<double, 6> c{x0, v0, 0.5 * a0, 0.0, 0.0, 0.0};
  double T2 = T * T, T3 = T2 * T, T4 = T3 * T, T5 = T4 * T;
  // Solve for c3..c5 from the end conditions.
  double b0 = x1 - (c[0] + c[1] * T + c[2] * T2);
  double b1 = v1 - (c[1] + 2.0 * c[2] * T);
  double b2 = a1 - 2.0 * c[2];
  // Inverse of [[T3,T4,T5],[3T2,4T3,5T4],[6T,12T2,20T3]], closed form.
  c[3] = (10.0 * b0 - 4.0 * b1 * T + 0.5 * b2 * T2) / T3;
  c[4] = (-15.0 * b0 + 7.0 * b1 * T - b2 * T2) / T4;
  c[5] = (6.0 * b0 - 3.0 * b1 * T + 0.5 * b2 * T2) / T5;
  return c;
}

std::array<double, 5> quartic_coeffs(double x0, double v0, double a0, double v1,
                                     double a1, double T) {
  std::array<double, 5> c{x0, v0, 0.5 * a0, 0.0, 0.0};
  double T2 = T * T, T3 = T2 * T;
  double b0 = v1 - (c[1] + 2.0 * c[2] * T);
  double b1 = a1 - 2.0 * c[2];
  // Inverse of [[3T2,4T3],[6T,12T2]], determinant 12 T^4.
  c[3] = (b0 - b1 * T / 3.0) / T2;
  c[4] = (b1 * T / 4.0 - b0 * 0.5) / T3;
  return c;
}

double poly_eval(std::span<const double> c, double t) {
  double acc = 0.0;
  for (int i = static_cast<int>(c.size()) - 1; i >= 0; --i) acc = acc * t + c[i];
  return acc;
}

double poly_eval_d1(std::span<const double> c, double t) {
  double acc = 0.0;
  for (int i = static_cast<int>(c.size()) - 1; i >= 1; --i) acc = acc * t + i * c[i];
  return acc;
}

double poly_eval_d2(std::span<const double> c, double t) {
  double acc = 0.0;
  for (int i = static_cast<int>(c.size()) - 1; i >= 2; --i) acc = acc * t + i * (i - 1) * c[i];
  return acc;
}

double poly_eval_d3(std::span<const double> c, double t) {
  double acc = 0.0;
  for (int i = static_cast<int>(c.size()) - 1; i >= 3; --i) acc = acc * t + i * (i - 1) * (i - 2) * c[i];
  return acc;
}

namespace {

std::vector<double> linspace(double lo, double hi, int n) {
  std::vector<double> out;
  out.reserve(n);
  if (n <= 1) {
    out.push_back(0.5 * (lo + hi));
    return out;
  }
  for (int i = 0; i < n; ++i) out.push_back(lo + (hi - lo) * i / (n - 1));
  return out;
}

Pose2 frenet_to_world(std::span<const Vec2> route, double s, double d) {
  Pose2 base = pose_at_arclength(route, s);
  Pose2 out;
  out.x = base.x - d * std::sin(base.heading);
  out.y = base.y + d * std::cos(base.heading);
  out.heading = base.heading;
  return out;
}

}  // namespace

std::vector<FrenetCandidate> frenet_candidates(const PlannerView& view,
                                               const FrenetParams& params,
                                               std::span<const Vec2> route, double dt) {
  if (route.size() < 2) throw InvariantError("frenet_plan: empty route");
  PolylineProjection proj = project_to_polyline(route, view.ego.pose.position());
  if (!std::isfinite(proj.distance)) throw InvariantError("frenet_plan: projection failure");

  const double dh = normalize_angle(view.ego.pose.heading - proj.tangent_heading);
  const double d0 = proj.lateral;
  const double d0_dot = view.ego.speed * std::sin(dh);
  const double s0_dot = std::max(0.0, view.ego.speed * std::cos(dh));
  const double v_desired = params.v_max;
  const double t_max = params.horizon_steps * dt;

  std::vector<double> d_targets = linspace(-0.5 * params.lateral_span, 0.5 * params.lateral_span,
                                           params.n_lateral);
  // End speeds sample a velocity_span-wide window around the current speed
  // (clipped to the variant's speed range); the velocity cost still pulls
  // toward v_desired, so braking candidates stay available near obstacles.
  double v_hi = std::min(params.v_max, view.ego.speed + 0.5 * params.velocity_span);
  double v_lo = std::clamp(view.ego.speed - 0.5 * params.velocity_span, params.v_min, v_hi);
  std::vector<double> v_targets = linspace(v_lo, v_hi, params.n_velocity);

  std::vector<FrenetCandidate> out;
  out.reserve(static_cast<std::size_t>(params.n_time) * d_targets.size() * v_targets.size());

  for (int ti = 0; ti < params.n_time; ++ti) {
    double T = t_max * (ti + 1) / params.n_time;
    if (T < 2.0 * dt) T = 2.0 * dt;
    int n_samples = std::max(2, static_cast<int>(std::floor(T / dt + 1e-9)));
    for (double d_target : d_targets) {
      auto dc = quintic_coeffs(d0, d0_dot, 0.0, d_target, 0.0, 0.0, T);
      for (double v_target : v_targets) {
        auto sc = quartic_coeffs(0.0, s0_dot, 0.0, v_target, 0.0, T);

        FrenetCandidate cand;
        Vec2 prev_pos = view.ego.pose.position();
        for (int k = 1; k <= n_samples; ++k) {
          double t = k * dt;
          double s_rel = poly_eval(sc, t);
          double d = poly_eval(dc, t);
          double sa = poly_eval_d2(sc, t), da = poly_eval_d2(dc, t);
          double sj = poly_eval_d3(sc, t), dj = poly_eval_d3(dc, t);
          cand.accel_sq += (sa * sa + da * da) * dt;
          cand.jerk_sq += (sj * sj + dj * dj) * dt;

          Pose2 p = frenet_to_world(route, proj.arc_length + std::max(0.0, s_rel), d);
          Vec2 delta = p.position() - prev_pos;
          p.heading = delta.norm() > 1e-6 ? std::atan2(delta.y, delta.x) : view.ego.pose.heading;
          if (k == 1) cand.first_pose = p;
          prev_pos = p.position();

          if (!cand.collides) {
            for (const AgentState& other : view.others) {
              if (!other.valid) continue;
              Pose2 op = other.pose;
              op.x += other.speed * t * std::cos(op.heading);
              op.y += other.speed * t * std::sin(op.heading);
              if (obb_overlap(p, view.ego.length, view.ego.width, op, other.length, other.width)) {
                cand.collides = true;
                break;
              }
            }
          }
        }

        cand.d_end = poly_eval(dc, T);
        cand.v_end = poly_eval_d1(sc, T);
        cand.progress = poly_eval(sc, T);
        cand.cost = params.w_lateral * std::abs(cand.d_end) +
                    params.w_velocity * std::abs(cand.v_end - v_desired) +
                    params.w_acceleration * cand.accel_sq + params.w_jerk * cand.jerk_sq +
                    params.w_progress * (-cand.progress) +
                    (cand.collides ? params.collision_penalty : 0.0);
        out.push_back(cand);
      }
    }
  }
  return out;
}

Pose2 frenet_plan(const PlannerView& view, const FrenetParams& params,
                  std::span<const Vec2> route, double dt) {
  std::vector<FrenetCandidate> candidates = frenet_candidates(view, params, route, dt);

  bool any_clear = false;
  int best = -1;
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    if (!candidates[i].collides) any_clear = true;
    if (best < 0 || candidates[i].cost < candidates[best].cost) best = static_cast<int>(i);
  }

  if (!any_clear || best < 0) {
    // Max-brake straight fallback.
    double v1 = std::max(0.0, view.ego.speed - kMaxBrake * dt);
    Pose2 out = view.ego.pose;
    double adv = 0.5 * (view.ego.speed + v1) * dt;
    out.x += adv * std::cos(out.heading);
    out.y += adv * std::sin(out.heading);
    return out;
  }
  return candidates[best].first_pose;
}

PdmBreakdown pdm_score_detail(const EgoRollout& rollout, std::span<const Vec2> route,
                              double logged_arc_length, const PdmWeights& weights, double dt) {
  PdmBreakdown out;
  for (auto c : rollout.collided) out.collision_gate = out.collision_gate || c;
  for (auto o : rollout.offroad) out.offroad_gate = out.offroad_gate || o;
  if (rollout.poses.size() < 2) return out;

  double s_start = project_to_polyline(route, rollout.poses.front().position()).arc_length;
  double s_end = project_to_polyline(route, rollout.poses.back().position()).arc_length;
  double traveled = std::max(0.0, s_end - s_start);
  out.progress = logged_arc_length < 0.5 ? 1.0
                                         : std::clamp(traveled / logged_arc_length, 0.0, 1.0);

  if (!rollout.ttc.empty()) {
    int n = 0;
    for (double t : rollout.ttc) {
      if (t >= weights.ttc_threshold) ++n;
    }
    out.ttc_fraction = static_cast<double>(n) / rollout.ttc.size();
  } else {
    out.ttc_fraction = 1.0;
  }

  // Comfort from finite differences of the pose sequence.
  const auto& poses = rollout.poses;
  std::vector<double> vx(poses.size(), 0.0), vy(poses.size(), 0.0);
  for (std::size_t k = 1; k < poses.size(); ++k) {
    vx[k] = (poses[k].x - poses[k - 1].x) / dt;
    vy[k] = (poses[k].y - poses[k - 1].y) / dt;
  }
  int comfort_n = 0, comfort_ok = 0;
  double prev_ax = 0.0, prev_ay = 0.0;
  for (std::size_t k = 2; k < poses.size(); ++k) {
    double ax = (vx[k] - vx[k - 1]) / dt;
    double ay = (vy[k] - vy[k - 1]) / dt;
    double accel = std::hypot(ax, ay);
    bool ok = accel <= weights.comfort_accel;
    if (k > 2) {
      double jerk = std::hypot(ax - prev_ax, ay - prev_ay) / dt;
      ok = ok && jerk <= weights.comfort_jerk;
    }
    prev_ax = ax;
    prev_ay = ay;
    ++comfort_n;
    if (ok) ++comfort_ok;
  }
  out.comfort = comfort_n > 0 ? static_cast<double>(comfort_ok) / comfort_n : 1.0;

  if (!out.collision_gate && !out.offroad_gate) {
    double wsum = weights.w_progress + weights.w_ttc + weights.w_comfort;
    out.score = (weights.w_progress * out.progress + weights.w_ttc * out.ttc_fraction +
                 weights.w_comfort * out.comfort) /
                wsum;
  }
  return out;
}

double pdm_score(const EgoRollout& rollout, std::span<const Vec2> route,
                 double logged_arc_length, const PdmWeights& weights, double dt) {
  return pdm_score_detail(rollout, route, logged_arc_length, weights, dt).score;
}

PlannerPresets builtin_planner_presets() {
  PlannerPresets p;
  auto idm = [&](const char* name, const char* desc, double v0, double s0, double T,
                 double a, double b, double agg, double range) {
    IdmPreset preset;
    preset.name = name;
    preset.description = desc;
    preset.params = IdmParams{v0, s0, T, a, b, 4.0, agg, range};
    p.idm.push_back(std::move(preset));
  };
  idm("IDM Baseline", "Standard, balanced behavior", 30.0, 2.0, 1.5, 2.0, 3.0, 0.5, 50.0);
  idm("IDM Conservative", "Cautious", 25.0, 3.0, 2.0, 1.5, 2.0, 0.2, 50.0);
  idm("IDM Aggressive", "Dynamic", 35.0, 1.5, 1.0, 3.0, 4.0, 0.8, 50.0);
  idm("IDM Comfort", "Smooth", 28.0, 2.5, 1.8, 1.5, 2.0, 0.3, 50.0);
  idm("IDM Highway", "High-speed, 100 m perception", 40.0, 3.0, 1.2, 2.0, 3.0, 0.6, 100.0);
  idm("IDM City", "Urban, 30 m perception", 15.0, 2.0, 1.5, 2.0, 3.0, 0.4, 30.0);
  idm("IDM Truck", "Heavy vehicle", 25.0, 4.0, 2.0, 2.0, 3.0, 0.3, 50.0);
  idm("IDM Emergency", "Urgent, max accel 4.0", 40.0, 1.5, 0.8, 4.0, 3.0, 0.9, 50.0);
  idm("IDM Adaptive", "Balanced", 30.0, 2.5, 1.5, 2.0, 3.0, 0.5, 50.0);
  idm("IDM Defensive", "Safety-first", 25.0, 4.0, 2.5, 2.0, 3.0, 0.1, 50.0);

  auto frenet = [&](const char* name, const char* desc, FrenetParams fp) {
    FrenetPreset preset;
    preset.name = name;
    preset.description = desc;
    preset.params = fp;
    p.frenet.push_back(std::move(preset));
  };
  FrenetParams base;  // medium safety = collision penalty 1000
  frenet("Frenet Baseline", "Balanced standard configuration", base);
  {
    FrenetParams f = base;
    f.v_max = 35.0;
    f.w_lateral = 5.0;
    f.w_velocity = 0.5;
    f.w_progress = 2.0;
    f.collision_penalty = 500.0;  // low safety focus
    frenet("Frenet Aggressive", "High progress", f);
  }
  {
    FrenetParams f = base;
    f.v_max = 20.0;
    f.w_lateral = 50.0;
    f.w_acceleration = 3.0;
    f.w_jerk = 1.5;
    f.collision_penalty = 5000.0;
    frenet("Frenet Conservative", "Safety-first, collision penalty 5000", f);
  }
  {
    FrenetParams f = base;
    f.w_lateral = 20.0;
    f.w_velocity = 2.0;
    f.w_acceleration = 5.0;
    f.w_jerk = 3.0;
    frenet("Frenet Smooth Rider", "Comfort, jerk weight 3.0", f);
  }
  {
    FrenetParams f = base;
    f.w_lateral = 100.0;
    f.lateral_span = 1.5;
    frenet("Frenet Lane Keeper", "Centerline, lateral span 1.5 m", f);
  }
  {
    FrenetParams f = base;
    f.n_lateral = 20;
    f.n_velocity = 10;
    f.n_time = 7;
    frenet("Frenet Wide Search", "Comprehensive, large search space", f);
  }
  {
    FrenetParams f = base;
    f.n_lateral = 5;
    f.n_velocity = 3;
    f.n_time = 2;
    f.horizon_steps = 10;
    frenet("Frenet Fast Planner", "Quick, reduced horizon", f);
  }
  {
    FrenetParams f = base;
    f.horizon_steps = 40;
    frenet("Frenet Long Horizon", "Strategic, 40 horizon steps", f);
  }
  {
    FrenetParams f = base;
    f.collision_penalty = 0.0;
    frenet("Frenet No Collision", "Test baseline, collision disabled", f);
  }
  {
    FrenetParams f = base;
    f.v_min = 5.0;
    f.v_max = 40.0;
    f.velocity_span = 15.0;
    frenet("Frenet High Speed", "Highway, velocity span 15", f);
  }
  return p;
}

namespace {

using Json = nlohmann::ordered_json;

Json idm_to_json(const IdmPreset& p) {
  return Json{{"name", p.name},
              {"description", p.description},
              {"desired_speed", p.params.desired_speed},
              {"min_spacing", p.params.min_spacing},
              {"time_headway", p.params.time_headway},
              {"max_accel", p.params.max_accel},
              {"comfort_decel", p.params.comfort_decel},
              {"delta", p.params.delta},
              {"aggressiveness", p.params.aggressiveness},
              {"perception_range", p.params.perception_range}};
}

Json frenet_to_json(const FrenetPreset& p) {
  return Json{{"name", p.name},
              {"description", p.description},
              {"w_lateral", p.params.w_lateral},
              {"w_velocity", p.params.w_velocity},
              {"w_acceleration", p.params.w_acceleration},
              {"w_progress", p.params.w_progress},
              {"w_jerk", p.params.w_jerk},
              {"collision_penalty", p.params.collision_penalty},
              {"n_lateral", p.params.n_lateral},
              {"n_velocity", p.params.n_velocity},
              {"n_time", p.params.n_time},
              {"lateral_span", p.params.lateral_span},
              {"velocity_span", p.params.velocity_span},
              {"horizon_steps", p.params.horizon_steps},
              {"v_min", p.params.v_min},
              {"v_max", p.params.v_max}};
}

}  // namespace

void save_planner_presets(const PlannerPresets& presets, const std::string& path) {
  Json j;
  j["schema_version"] = 1;
  j["idm"] = Json::array();
  for (const auto& p : presets.idm) j["idm"].push_back(idm_to_json(p));
  j["frenet"] = Json::array();
  for (const auto& p : presets.frenet) j["frenet"].push_back(frenet_to_json(p));
  std::ofstream out(path);
  if (!out) throw IoError("cannot write presets file: " + path);
  out << j.dump(1) << "\n";
}

PlannerPresets load_planner_presets(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open presets file: " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(ss.str());
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("malformed presets file: ") + e.what());
  }
  if (!j.contains("schema_version") || j["schema_version"].get<int>() != 1) {
    throw SchemaError("presets schema_version missing or unsupported");
  }
  PlannerPresets presets;
  try {
    for (const auto& jp : j.at("idm")) {
      IdmPreset p;
      p.name = jp.at("name").get<std::string>();
      p.description = jp.value("description", "");
      p.params.desired_speed = jp.at("desired_speed").get<double>();
      p.params.min_spacing = jp.at("min_spacing").get<double>();
      p.params.time_headway = jp.at("time_headway").get<double>();
      p.params.max_accel = jp.at("max_accel").get<double>();
      p.params.comfort_decel = jp.at("comfort_decel").get<double>();
      p.params.delta = jp.at("delta").get<double>();
      p.params.aggressiveness = jp.at("aggressiveness").get<double>();
      p.params.perception_range = jp.at("perception_range").get<double>();
      presets.idm.push_back(std::move(p));
    }
    for (const auto& jp : j.at("frenet")) {
      FrenetPreset p;
      p.name = jp.at("name").get<std::string>();
      p.description = jp.value("description", "");
      p.params.w_lateral = jp.at("w_lateral").get<double>();
      p.params.w_velocity = jp.at("w_velocity").get<double>();
      p.params.w_acceleration = jp.at("w_acceleration").get<double>();
      p.params.w_progress = jp.at("w_progress").get<double>();
      p.params.w_jerk = jp.at("w_jerk").get<double>();
      p.params.collision_penalty = jp.at("collision_penalty").get<double>();
      p.params.n_lateral = jp.at("n_lateral").get<int>();
      p.params.n_velocity = jp.at("n_velocity").get<int>();
      p.params.n_time = jp.at("n_time").get<int>();
      p.params.lateral_span = jp.at("lateral_span").get<double>();
      p.params.velocity_span = jp.at("velocity_span").get<double>();
      p.params.horizon_steps = jp.at("horizon_steps").get<int>();
      p.params.v_min = jp.at("v_min").get<double>();
      p.params.v_max = jp.at("v_max").get<double>();
      presets.frenet.push_back(std::move(p));
    }
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError(std::string("presets field error: ") + e.what());
  }
  return presets;
}

}  // namespace tsim
