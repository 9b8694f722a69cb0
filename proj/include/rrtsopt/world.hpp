#pragma once

/**
 * @file
 * @brief Planar obstacles with exact signed distances, and the world that holds them.
 *
 * Every obstacle contributes one safety function h(p) = sd(p) - inflation, positive
 * outside, negative inside and zero on the inflated boundary. Circles and convex
 * polygons are supported; both have closed-form distances and gradients.
 */

#include <rrtsopt/errors.hpp>

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <unordered_set>
#include <utility>
#include <variant>
#include <vector>

namespace rrtsopt {

using Vec2 = Eigen::Vector2d;

struct Circle
{
  Vec2 center{Vec2::Zero()};
  double radius{1.0};
};

/// Counter-clockwise, strictly convex, no repeated vertices.
struct ConvexPolygon
{
  std::vector<Vec2> vertices;
};

using Shape = std::variant<Circle, ConvexPolygon>;

/// Axis-aligned workspace box.
struct Bounds
{
  Vec2 lo{Vec2::Zero()};
  Vec2 hi{Vec2::Ones()};

  [[nodiscard]] double diagonal() const { return (hi - lo).norm(); }
  [[nodiscard]] bool contains(const Vec2 & p) const
  {
    return p.x() >= lo.x() && p.y() >= lo.y() && p.x() <= hi.x() && p.y() <= hi.y();
  }
};

namespace detail {

inline double cross2(const Vec2 & a, const Vec2 & b) { return a.x() * b.y() - a.y() * b.x(); }

inline Vec2 outward_normal(const Vec2 & a, const Vec2 & b)
{
  const Vec2 e = b - a;
  return Vec2(e.y(), -e.x()).normalized();
}

/// Closest point on segment [a, b] to p.
inline Vec2 closest_on_segment(const Vec2 & p, const Vec2 & a, const Vec2 & b)
{
  const Vec2 e   = b - a;
  const double t = std::clamp((p - a).dot(e) / e.squaredNorm(), 0.0, 1.0);
  return a + t * e;
}

}  // namespace detail

/// Throws ArgumentError describing the first violated shape invariant.
inline void validate_shape(const Shape & shape)
{
  if (const auto * c = std::get_if<Circle>(&shape)) {
    if (!(c->radius > 0.0) || !std::isfinite(c->radius)) throw ArgumentError("circle radius must be positive");
    if (!c->center.allFinite()) throw ArgumentError("circle center must be finite");
    return;
  }
  const auto & v = std::get<ConvexPolygon>(shape).vertices;
  const std::size_t n = v.size();
  if (n < 3) throw ArgumentError("polygon needs at least 3 vertices");
  for (std::size_t i = 0; i < n; ++i) {
    if (!v[i].allFinite()) throw ArgumentError("polygon vertex must be finite");
    for (std::size_t j = i + 1; j < n; ++j) {
      if (v[i] == v[j]) throw ArgumentError("polygon has repeated vertices");
    }
  }
  for (std::size_t i = 0; i < n; ++i) {
    const Vec2 & a = v[i];
    const Vec2 & b = v[(i + 1) % n];
    const Vec2 & c = v[(i + 2) % n];
    if (!(detail::cross2(b - a, c - b) > 0.0)) {
      throw ArgumentError("polygon must be strictly convex and counter-clockwise");
    }
  }
}

class Obstacle
{
public:
  Obstacle(int id, Shape shape, double inflation = 0.0) : id_(id), shape_(std::move(shape)), inflation_(inflation)
  {
    validate_shape(shape_);
    if (!(inflation_ >= 0.0) || !std::isfinite(inflation_)) throw ArgumentError("inflation must be non-negative");
  }

  [[nodiscard]] int id() const noexcept { return id_; }
  [[nodiscard]] const Shape & shape() const noexcept { return shape_; }
  [[nodiscard]] double inflation() const noexcept { return inflation_; }

  /// Copy with `extra` added to the inflation.
  [[nodiscard]] Obstacle inflated(double extra) const { return Obstacle(id_, shape_, inflation_ + extra); }

  /// Euclidean distance to the raw shape boundary, negative inside.
  [[nodiscard]] double raw_distance(const Vec2 & p) const
  {
    if (const auto * c = std::get_if<Circle>(&shape_)) return (p - c->center).norm() - c->radius;

    const auto & v     = std::get<ConvexPolygon>(shape_).vertices;
    const std::size_t n = v.size();
    double max_line    = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < n; ++i) {
      max_line = std::max(max_line, detail::outward_normal(v[i], v[(i + 1) % n]).dot(p - v[i]));
    }
    if (max_line <= 0.0) return max_line;

    double best = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < n; ++i) {
      best = std::min(best, (p - detail::closest_on_segment(p, v[i], v[(i + 1) % n])).norm());
    }
    return best;
  }

  /// h(p): distance to the inflated boundary.
  [[nodiscard]] double signed_distance(const Vec2 & p) const { return raw_distance(p) - inflation_; }

  /// Gradient of signed_distance. Ties resolve to the lowest-indexed edge; the circle
  /// center maps to +x.
  [[nodiscard]] Vec2 gradient(const Vec2 & p) const
  {
    if (const auto * c = std::get_if<Circle>(&shape_)) {
      const Vec2 d = p - c->center;
      const double r = d.norm();
      return r > 0.0 ? Vec2(d / r) : Vec2::UnitX();
    }

    const auto & v     = std::get<ConvexPolygon>(shape_).vertices;
    const std::size_t n = v.size();
    double max_line    = -std::numeric_limits<double>::infinity();
    std::size_t max_edge = 0;
    for (std::size_t i = 0; i < n; ++i) {
      const double s = detail::outward_normal(v[i], v[(i + 1) % n]).dot(p - v[i]);
      if (s > max_line) {
        max_line = s;
        max_edge = i;
      }
    }
    if (max_line <= 0.0) return detail::outward_normal(v[max_edge], v[(max_edge + 1) % n]);

    double best = std::numeric_limits<double>::infinity();
    Vec2 closest = v[0];
    std::size_t best_edge = 0;
    for (std::size_t i = 0; i < n; ++i) {
      const Vec2 q   = detail::closest_on_segment(p, v[i], v[(i + 1) % n]);
      const double d = (p - q).norm();
      if (d < best) {
        best      = d;
        closest   = q;
        best_edge = i;
      }
    }
    if (best > 0.0) return (p - closest) / best;
    return detail::outward_normal(v[best_edge], v[(best_edge + 1) % n]);
  }

private:
  int id_;
  Shape shape_;
  double inflation_;
};

/// Result of a clearance scan. `obstacle_id` / `point_index` are empty when the world
/// has no obstacles (distance is then +inf).
struct Clearance
{
  double distance{std::numeric_limits<double>::infinity()};
  std::optional<int> obstacle_id;
  std::optional<std::size_t> point_index;
};

class World
{
public:
  World() = default;

  World(Bounds bounds, std::vector<Obstacle> obstacles) : bounds_(bounds), obstacles_(std::move(obstacles))
  {
    if (!bounds_.lo.allFinite() || !bounds_.hi.allFinite() || !((bounds_.hi - bounds_.lo).minCoeff() > 0.0)) {
      throw ArgumentError("world bounds must have positive extent in every axis");
    }
    std::unordered_set<int> seen;
    for (const auto & o : obstacles_) {
      if (!seen.insert(o.id()).second) throw ArgumentError("duplicate obstacle id " + std::to_string(o.id()));
    }
  }

  [[nodiscard]] const Bounds & bounds() const noexcept { return bounds_; }
  [[nodiscard]] const std::vector<Obstacle> & obstacles() const noexcept { return obstacles_; }
  [[nodiscard]] bool empty() const noexcept { return obstacles_.empty(); }

  [[nodiscard]] const Obstacle & obstacle(int id) const
  {
    for (const auto & o : obstacles_) {
      if (o.id() == id) return o;
    }
    throw LookupError("unknown obstacle id " + std::to_string(id));
  }

  /// Copy of this world with every obstacle's inflation grown by `extra`.
  [[nodiscard]] World inflated(double extra) const
  {
    if (extra == 0.0) return *this;
    std::vector<Obstacle> grown;
    grown.reserve(obstacles_.size());
    for (const auto & o : obstacles_) grown.push_back(o.inflated(extra));
    return World(bounds_, std::move(grown));
  }

private:
  Bounds bounds_{};
  std::vector<Obstacle> obstacles_;
};

inline double signed_distance(const World & world, int obstacle_id, const Vec2 & point)
{
  return world.obstacle(obstacle_id).signed_distance(point);
}

inline Vec2 distance_gradient(const World & world, int obstacle_id, const Vec2 & point)
{
  return world.obstacle(obstacle_id).gradient(point);
}

/// Minimum signed distance over all (obstacle, point) pairs, with its argmin.
/// Ties keep the first obstacle in world order, then the lowest point index.
inline Clearance min_clearance(const World & world, std::span<const Vec2> points)
{
  if (points.empty()) throw ArgumentError("min_clearance needs at least one point");
  Clearance out;
  for (const auto & o : world.obstacles()) {
    for (std::size_t i = 0; i < points.size(); ++i) {
      const double d = o.signed_distance(points[i]);
      if (d < out.distance) {
        out.distance    = d;
        out.obstacle_id = o.id();
        out.point_index = i;
      }
    }
  }
  return out;
}

}  // namespace rrtsopt
