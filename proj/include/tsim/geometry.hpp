#pragma once

#include <cmath>
#include <span>
#include <vector>

namespace tsim {

struct Vec2 {
  double x = 0.0;
  double y = 0.0;

  Vec2 operator+(const Vec2& o) const { return {x + o.x, y + o.y}; }
  Vec2 operator-(const Vec2& o) const { return {x - o.x, y - o.y}; }
  Vec2 operator*(double s) const { return {x * s, y * s}; }
  double dot(const Vec2& o) const { return x * o.x + y * o.y; }
  double norm() const { return std::hypot(x, y); }
};

// Wrap into (-pi, pi]. -pi maps to +pi.
double normalize_angle(double a);

struct Pose2 {
  double x = 0.0;
  double y = 0.0;
  double heading = 0.0;  // radians, (-pi, pi]

  Vec2 position() const { return {x, y}; }
};

bool pose_finite(const Pose2& p);

// world = base ⊕ rel (rel expressed in base's frame).
Pose2 compose(const Pose2& base, const Pose2& rel);

// Inverse of compose: target expressed in base's frame.
Pose2 relative_to(const Pose2& base, const Pose2& target);

// World point into base's frame.
Vec2 to_frame(const Pose2& base, const Vec2& world_point);

// Signed SAT margin between two oriented boxes (center pose, full length
// along heading, full width across). Positive = separated by that distance
// along the best axis, negative = penetrating. Boxes overlap iff margin < 0,
// so exact edge contact does not count as a collision.
double obb_sat_margin(const Pose2& a, double len_a, double wid_a,
                      const Pose2& b, double len_b, double wid_b);

bool obb_overlap(const Pose2& a, double len_a, double wid_a,
                 const Pose2& b, double len_b, double wid_b);

double point_segment_distance(const Vec2& p, const Vec2& a, const Vec2& b);

// Even-odd rule; points on the boundary count as inside.
bool point_in_polygon(const Vec2& p, std::span<const Vec2> poly);

double polyline_length(std::span<const Vec2> pts);

struct PolylineProjection {
  double arc_length = 0.0;  // distance along the polyline to the foot point
  double lateral = 0.0;     // signed offset, left of travel direction positive
  double distance = 0.0;    // unsigned distance to the polyline
  int segment = 0;
  double tangent_heading = 0.0;
};

PolylineProjection project_to_polyline(std::span<const Vec2> pts, const Vec2& p);

// Point and tangent heading at a given arc length (clamped to the ends).
Pose2 pose_at_arclength(std::span<const Vec2> pts, double s);

double polyline_distance(std::span<const Vec2> pts, const Vec2& p);

}  // namespace tsim
