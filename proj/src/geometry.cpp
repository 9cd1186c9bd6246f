#include "tsim/geometry.hpp"

#include <algorithm>
#include <array>
#include <limits>

namespace tsim {

double normalize_angle(double a) {
  a = std::fmod(a + M_PI, 2.0 * M_PI);
  if (a <= 0.0) a += 2.0 * M_PI;
  return a - M_PI;
}

bool pose_finite(const Pose2& p) {
  return std::isfinite(p.x) && std::isfinite(p.y) && std::isfinite(p.heading);
}

Pose2 compose(const Pose2& base, const Pose2& rel) {
  double c = std::cos(base.heading), s = std::sin(base.heading);
  Pose2 out;
  out.x = base.x + rel.x * c - rel.y * s;
  out.y = base.y + rel.x * s + rel.y * c;
  out.heading = normalize_angle(base.heading + rel.heading);
  return out;
}

Pose2 relative_to(const Pose2& base, const Pose2& target) {
  double c = std::cos(base.heading), s = std::sin(base.heading);
  double dx = target.x - base.x, dy = target.y - base.y;
  Pose2 out;
  out.x = dx * c + dy * s;
  out.y = -dx * s + dy * c;
  out.heading = normalize_angle(target.heading - base.heading);
  return out;
}

Vec2 to_frame(const Pose2& base, const Vec2& world_point) {
  double c = std::cos(base.heading), s = std::sin(base.heading);
  double dx = world_point.x - base.x, dy = world_point.y - base.y;
  return {dx * c + dy * s, -dx * s + dy * c};
}

namespace {

struct Obb {
  Vec2 center;
  Vec2 axis_x;  // unit, along heading
  Vec2 axis_y;  // unit, across
  double hx;    // half length
  double hy;    // half width
};

Obb make_obb(const Pose2& p, double len, double wid) {
  double c = std::cos(p.heading), s = std::sin(p.heading);
  return {{p.x, p.y}, {c, s}, {-s, c}, 0.5 * len, 0.5 * wid};
}

// Projected gap of box b onto one axis of box a (and vice versa): returns
// |center distance along axis| - (extent of a + extent of b).
double axis_gap(const Obb& a, const Obb& b, const Vec2& axis, double a_extent) {
  double dist = std::abs((b.center - a.center).dot(axis));
  double b_extent = std::abs(b.axis_x.dot(axis)) * b.hx + std::abs(b.axis_y.dot(axis)) * b.hy;
  return dist - a_extent - b_extent;
}

}  // namespace

double obb_sat_margin(const Pose2& pa, double len_a, double wid_a,
                      const Pose2& pb, double len_b, double wid_b) {
  Obb a = make_obb(pa, len_a, wid_a);
  Obb b = make_obb(pb, len_b, wid_b);
  double m = -std::numeric_limits<double>::infinity();
  m = std::max(m, axis_gap(a, b, a.axis_x, a.hx));
  m = std::max(m, axis_gap(a, b, a.axis_y, a.hy));
  m = std::max(m, axis_gap(b, a, b.axis_x, b.hx));
  m = std::max(m, axis_gap(b, a, b.axis_y, b.hy));
  return m;
}

bool obb_overlap(const Pose2& a, double len_a, double wid_a,
                 const Pose2& b, double len_b, double wid_b) {
  return obb_sat_margin(a, len_a, wid_a, b, len_b, wid_b) < 0.0;
}

double point_segment_distance(const Vec2& p, const Vec2& a, const Vec2& b) {
  Vec2 ab = b - a;
  double len2 = ab.dot(ab);
  if (len2 <= 0.0) return (p - a).norm();
  double t = std::clamp((p - a).dot(ab) / len2, 0.0, 1.0);
  return (p - (a + ab * t)).norm();
}

bool point_in_polygon(const Vec2& p, std::span<const Vec2> poly) {
  const std::size_t n = poly.size();
  if (n < 3) return false;
  // Boundary counts as inside.
  constexpr double kEdgeEps = 1e-9;
  for (std::size_t i = 0, j = n - 1; i < n; j = i++) {
    if (point_segment_distance(p, poly[j], poly[i]) <= kEdgeEps) return true;
  }
  bool inside = false;
  for (std::size_t i = 0, j = n - 1; i < n; j = i++) {
    const Vec2& pi = poly[i];
    const Vec2& pj = poly[j];
    if ((pi.y > p.y) != (pj.y > p.y)) {
      double x_cross = (pj.x - pi.x) * (p.y - pi.y) / (pj.y - pi.y) + pi.x;
      if (p.x < x_cross) inside = !inside;
    }
  }
  return inside;
}

double polyline_length(std::span<const Vec2> pts) {
  double s = 0.0;
  for (std::size_t i = 1; i < pts.size(); ++i) s += (pts[i] - pts[i - 1]).norm();
  return s;
}

PolylineProjection project_to_polyline(std::span<const Vec2> pts, const Vec2& p) {
  PolylineProjection best;
  best.distance = std::numeric_limits<double>::infinity();
  double s_acc = 0.0;
  for (std::size_t i = 0; i + 1 < pts.size(); ++i) {
    Vec2 a = pts[i], b = pts[i + 1];
    Vec2 ab = b - a;
    double len = ab.norm();
    if (len <= 0.0) continue;
    double t = std::clamp((p - a).dot(ab) / (len * len), 0.0, 1.0);
    Vec2 foot = a + ab * t;
    double d = (p - foot).norm();
    if (d < best.distance) {
      double cross = ab.x * (p.y - a.y) - ab.y * (p.x - a.x);
      best.distance = d;
      best.arc_length = s_acc + t * len;
      best.lateral = (cross >= 0.0 ? d : -d);
      best.segment = static_cast<int>(i);
      best.tangent_heading = std::atan2(ab.y, ab.x);
    }
    s_acc += len;
  }
  return best;
}

Pose2 pose_at_arclength(std::span<const Vec2> pts, double s) {
  if (pts.size() < 2) return {pts.empty() ? 0.0 : pts[0].x, pts.empty() ? 0.0 : pts[0].y, 0.0};
  if (s < 0.0) s = 0.0;
  double s_acc = 0.0;
  for (std::size_t i = 0; i + 1 < pts.size(); ++i) {
    Vec2 a = pts[i], b = pts[i + 1];
    double len = (b - a).norm();
    if (len <= 0.0) continue;
    if (s <= s_acc + len || i + 2 == pts.size()) {
      double t = std::clamp((s - s_acc) / len, 0.0, 1.0);
      Vec2 pos = a + (b - a) * t;
      return {pos.x, pos.y, std::atan2(b.y - a.y, b.x - a.x)};
    }
    s_acc += len;
  }
  Vec2 last = pts[pts.size() - 1];
  Vec2 prev = pts[pts.size() - 2];
  return {last.x, last.y, std::atan2(last.y - prev.y, last.x - prev.x)};
}

double polyline_distance(std::span<const Vec2> pts, const Vec2& p) {
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i + 1 < pts.size(); ++i) {
    best = std::min(best, point_segment_distance(p, pts[i], pts[i + 1]));
  }
  if (pts.size() == 1) best = (p - pts[0]).norm();
  return best;
}

}  // namespace tsim
