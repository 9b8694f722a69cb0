#pragma once

#include <rrtsopt/robots.hpp>
#include <rrtsopt/world.hpp>

#include <algorithm>
#include <cmath>
#include <limits>
#include <variant>
#include <vector>

namespace rrtsopt {

/// Clearance below this counts as a collision in the final-output audit.
inline constexpr double kAuditTolerance = -1e-6;

struct AuditReport
{
  /// Minimum clearance over the robot's collision points (the planner's own model).
  double clearance{std::numeric_limits<double>::infinity()};
  /// Minimum clearance from the dense re-check.
  double dense_clearance{std::numeric_limits<double>::infinity()};
  [[nodiscard]] bool safe() const { return clearance >= kAuditTolerance && dense_clearance >= kAuditTolerance; }
};

namespace audit_detail {

// Geometry here is written from scratch on purpose: the dense audit must not share code
// with the distance routines the planner itself relies on.

inline double segment_distance(const Vec2 & p, const Vec2 & a, const Vec2 & b)
{
  const Vec2 ab   = b - a;
  const double l2 = ab.squaredNorm();
  double s        = l2 > 0.0 ? (p - a).dot(ab) / l2 : 0.0;
  s               = std::clamp(s, 0.0, 1.0);
  return (p - (a + s * ab)).norm();
}

inline double polygon_distance(const Vec2 & p, const std::vector<Vec2> & v)
{
  bool inside = true;
  double edge = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < v.size(); ++i) {
    const Vec2 & a = v[i];
    const Vec2 & b = v[(i + 1) % v.size()];
    const double cross = (b.x() - a.x()) * (p.y() - a.y()) - (b.y() - a.y()) * (p.x() - a.x());
    if (cross < 0.0) inside = false;
    edge = std::min(edge, segment_distance(p, a, b));
  }
  return inside ? -edge : edge;
}

inline double shape_distance(const Vec2 & p, const Shape & shape)
{
  if (const auto * c = std::get_if<Circle>(&shape)) return std::hypot(p.x() - c->center.x(), p.y() - c->center.y()) - c->radius;
  return polygon_distance(p, std::get<ConvexPolygon>(shape).vertices);
}

/// Workspace samples along the robot body: the point itself for the point mass,
/// `per_link` evenly spaced points (ends included) on every arm link.
inline std::vector<Vec2> body_samples(const RobotModel & model, const VectorXd & z, int per_link)
{
  if (!model.is_arm()) return {Vec2(z(0), z(1))};
  const auto & g = model.arm();
  std::vector<Vec2> out;
  Vec2 joint   = g.base;
  double angle = 0.0;
  for (std::size_t i = 0; i < g.link_lengths.size(); ++i) {
    angle += z(static_cast<Eigen::Index>(i));
    const Vec2 tip = joint + g.link_lengths[i] * Vec2(std::cos(angle), std::sin(angle));
    for (int s = 0; s <= per_link; ++s) out.push_back(joint + (tip - joint) * (static_cast<double>(s) / per_link));
    joint = tip;
  }
  return out;
}

}  // namespace audit_detail

/// Clearance of every waypoint (including the start) under the robot's collision-point model.
inline double audit_clearance(const World & world, const RobotModel & model, const Trajectory & traj)
{
  const double margin = model.body_margin();
  double best         = std::numeric_limits<double>::infinity();
  for (Eigen::Index t = 0; t < traj.waypoints(); ++t) {
    for (const auto & p : collision_points(model, traj.state(t))) {
      for (const auto & o : world.obstacles()) best = std::min(best, o.signed_distance(p) - margin);
    }
  }
  return best;
}

/// Independent re-check at `density` times the collision-point count. Arm links are
/// treated as capsules of radius sphere_radius.
inline double dense_audit_clearance(const World & world, const RobotModel & model, const Trajectory & traj, int density = 10)
{
  const int per_link  = model.is_arm() ? density * model.arm().spheres_per_link : 1;
  const double radius = model.is_arm() ? model.arm().sphere_radius : 0.0;
  double best         = std::numeric_limits<double>::infinity();
  for (Eigen::Index t = 0; t < traj.waypoints(); ++t) {
    for (const auto & p : audit_detail::body_samples(model, traj.state(t), per_link)) {
      for (const auto & o : world.obstacles()) {
        best = std::min(best, audit_detail::shape_distance(p, o.shape()) - o.inflation() - radius);
      }
    }
  }
  return best;
}

inline AuditReport audit(const World & world, const RobotModel & model, const Trajectory & traj)
{
  return {audit_clearance(world, model, traj), dense_audit_clearance(world, model, traj)};
}

}  // namespace rrtsopt
