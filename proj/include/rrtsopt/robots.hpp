#pragma once

/**
 * @file
 * @brief Discrete-time kinematic robot models, horizon rollouts and their Jacobians.
 *
 * Two models are provided:
 *  - point mass in the plane: z = (x, y), u = (vx, vy), z' = z + u dt
 *  - planar n-link arm: z = (theta_1..n, omega_1..n), u = (alpha_1..n),
 *    theta' = theta + omega dt, omega' = omega + alpha dt
 *
 * Both are linear in (z, u), so a rollout Jacobian is input-independent and block
 * lower-triangular. Stacked vectors follow u = [u_0; ...; u_{H-1}] and
 * z = [z_1; ...; z_H].
 */

#include <rrtsopt/errors.hpp>
#include <rrtsopt/world.hpp>

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>
#include <utility>
#include <vector>

namespace rrtsopt {

using Eigen::MatrixXd;
using Eigen::VectorXd;
using Matrix2X = Eigen::Matrix<double, 2, Eigen::Dynamic>;

enum class RobotKind { point_mass_2d, planar_arm };

struct ArmGeometry
{
  std::vector<double> link_lengths;
  Vec2 base{Vec2::Zero()};
  int spheres_per_link{2};
  double sphere_radius{0.05};
};

class RobotModel
{
public:
  static RobotModel point_mass(double dt, VectorXd input_lo, VectorXd input_hi)
  {
    RobotModel m;
    m.kind_ = RobotKind::point_mass_2d;
    m.dt_   = dt;
    m.lo_   = std::move(input_lo);
    m.hi_   = std::move(input_hi);
    m.validate();
    return m;
  }

  /// Point mass with symmetric speed bound |u_i| <= max_speed.
  static RobotModel point_mass(double dt, double max_speed = 10.0)
  {
    return point_mass(dt, VectorXd::Constant(2, -max_speed), VectorXd::Constant(2, max_speed));
  }

  static RobotModel planar_arm(ArmGeometry geometry, double dt, VectorXd input_lo, VectorXd input_hi)
  {
    RobotModel m;
    m.kind_ = RobotKind::planar_arm;
    m.arm_  = std::move(geometry);
    m.dt_   = dt;
    m.lo_   = std::move(input_lo);
    m.hi_   = std::move(input_hi);
    m.validate();
    return m;
  }

  static RobotModel planar_arm(ArmGeometry geometry, double dt, double max_accel = 20.0)
  {
    const auto n = static_cast<Eigen::Index>(geometry.link_lengths.size());
    return planar_arm(std::move(geometry), dt, VectorXd::Constant(n, -max_accel), VectorXd::Constant(n, max_accel));
  }

  [[nodiscard]] RobotKind kind() const noexcept { return kind_; }
  [[nodiscard]] bool is_arm() const noexcept { return kind_ == RobotKind::planar_arm; }
  [[nodiscard]] double dt() const noexcept { return dt_; }
  [[nodiscard]] const ArmGeometry & arm() const noexcept { return arm_; }
  [[nodiscard]] const VectorXd & input_lo() const noexcept { return lo_; }
  [[nodiscard]] const VectorXd & input_hi() const noexcept { return hi_; }

  [[nodiscard]] int n_joints() const noexcept { return static_cast<int>(arm_.link_lengths.size()); }
  [[nodiscard]] int state_dim() const noexcept { return is_arm() ? 2 * n_joints() : 2; }
  [[nodiscard]] int input_dim() const noexcept { return is_arm() ? n_joints() : 2; }
  /// Dimension of the configuration space RRT* samples in.
  [[nodiscard]] int config_dim() const noexcept { return is_arm() ? n_joints() : 2; }
  [[nodiscard]] int points_per_state() const noexcept
  {
    return is_arm() ? n_joints() * arm_.spheres_per_link : 1;
  }

  /// Extra inflation applied to every obstacle when checking this robot.
  /// For the arm this is the sphere radius plus half the largest spacing between
  /// consecutive sphere centers, so the sphere chain conservatively covers each link.
  [[nodiscard]] double body_margin() const
  {
    if (!is_arm()) return 0.0;
    const double longest = *std::max_element(arm_.link_lengths.begin(), arm_.link_lengths.end());
    return arm_.sphere_radius + 0.5 * longest / arm_.spheres_per_link;
  }

  /// z_{t+1} = A z_t + B u_t
  [[nodiscard]] MatrixXd state_matrix() const
  {
    const int n = state_dim();
    MatrixXd a  = MatrixXd::Identity(n, n);
    if (is_arm()) a.topRightCorner(n_joints(), n_joints()).diagonal().setConstant(dt_);
    return a;
  }

  [[nodiscard]] MatrixXd input_matrix() const
  {
    MatrixXd b = MatrixXd::Zero(state_dim(), input_dim());
    if (is_arm()) {
      b.bottomRows(n_joints()).diagonal().setConstant(dt_);
    } else {
      b.diagonal().setConstant(dt_);
    }
    return b;
  }

private:
  RobotModel() = default;

  void validate() const
  {
    if (!(dt_ > 0.0) || !std::isfinite(dt_)) throw ArgumentError("dt must be positive");
    if (is_arm()) {
      if (arm_.link_lengths.empty()) throw ArgumentError("arm needs at least one link");
      for (double l : arm_.link_lengths) {
        if (!(l > 0.0)) throw ArgumentError("link lengths must be positive");
      }
      if (arm_.spheres_per_link < 1) throw ArgumentError("spheres_per_link must be >= 1");
      if (!(arm_.sphere_radius > 0.0)) throw ArgumentError("sphere_radius must be positive");
    }
    if (lo_.size() != input_dim() || hi_.size() != input_dim()) {
      throw ArgumentError("input bounds must have one interval per input dimension");
    }
    if (!(lo_.array() < hi_.array()).all()) throw ArgumentError("input bounds need lower < upper");
  }

  RobotKind kind_{RobotKind::point_mass_2d};
  ArmGeometry arm_{};
  double dt_{0.1};
  VectorXd lo_;
  VectorXd hi_;
};

namespace detail {

inline void check_state(const RobotModel & m, const VectorXd & z)
{
  if (z.size() != m.state_dim()) {
    throw ArgumentError("state has dimension " + std::to_string(z.size()) + ", model expects " +
                        std::to_string(m.state_dim()));
  }
}

inline Eigen::Index horizon_of(const RobotModel & m, const VectorXd & u)
{
  const Eigen::Index du = m.input_dim();
  if (u.size() == 0 || u.size() % du != 0) {
    throw ArgumentError("stacked input length " + std::to_string(u.size()) + " is not a positive multiple of " +
                        std::to_string(du));
  }
  return u.size() / du;
}

}  // namespace detail

inline VectorXd step(const RobotModel & model, const VectorXd & z, const VectorXd & u)
{
  detail::check_state(model, z);
  if (u.size() != model.input_dim()) throw ArgumentError("input dimension mismatch");
  const double dt = model.dt();
  if (!model.is_arm()) return z + dt * u;

  const int n  = model.n_joints();
  VectorXd out = z;
  out.head(n) += dt * z.tail(n);
  out.tail(n) += dt * u;
  return out;
}

/// [z_1; ...; z_H] from repeated step().
inline VectorXd rollout(const RobotModel & model, const VectorXd & z0, const VectorXd & u)
{
  detail::check_state(model, z0);
  const Eigen::Index h  = detail::horizon_of(model, u);
  const Eigen::Index ds = model.state_dim();
  const Eigen::Index du = model.input_dim();
  VectorXd out(h * ds);
  VectorXd z = z0;
  for (Eigen::Index t = 0; t < h; ++t) {
    z                     = step(model, z, u.segment(t * du, du));
    out.segment(t * ds, ds) = z;
  }
  return out;
}

/// Jacobian of the affine map u -> rollout(z0, u); block (t, s) is A^{t-s} B for s <= t.
inline MatrixXd rollout_jacobian(const RobotModel & model, Eigen::Index horizon)
{
  if (horizon < 1) throw ArgumentError("horizon must be >= 1");
  const Eigen::Index ds = model.state_dim();
  const Eigen::Index du = model.input_dim();
  const MatrixXd a      = model.state_matrix();
  const MatrixXd b      = model.input_matrix();

  MatrixXd jac = MatrixXd::Zero(horizon * ds, horizon * du);
  // Column blocks share the same powers, so build the first block column then shift.
  MatrixXd blk = b;
  for (Eigen::Index t = 0; t < horizon; ++t) {
    for (Eigen::Index s = 0; s + t < horizon; ++s) {
      jac.block((s + t) * ds, s * du, ds, du) = blk;
    }
    blk = a * blk;
  }
  return jac;
}

inline MatrixXd rollout_jacobian(const RobotModel & model, const VectorXd & z0, const VectorXd & u)
{
  detail::check_state(model, z0);
  return rollout_jacobian(model, detail::horizon_of(model, u));
}

/// Stacked free response [A z0; A^2 z0; ...; A^H z0].
inline VectorXd free_response(const RobotModel & model, const VectorXd & z0, Eigen::Index horizon)
{
  detail::check_state(model, z0);
  const Eigen::Index ds = model.state_dim();
  const MatrixXd a      = model.state_matrix();
  VectorXd out(horizon * ds);
  VectorXd z = z0;
  for (Eigen::Index t = 0; t < horizon; ++t) {
    z                       = a * z;
    out.segment(t * ds, ds) = z;
  }
  return out;
}

/// Joint positions of the arm: base, then the end of each link.
inline std::vector<Vec2> joint_positions(const RobotModel & model, const VectorXd & z)
{
  detail::check_state(model, z);
  if (!model.is_arm()) return {z.head<2>()};
  const auto & g = model.arm();
  std::vector<Vec2> out;
  out.reserve(g.link_lengths.size() + 1);
  Vec2 p     = g.base;
  double phi = 0.0;
  out.push_back(p);
  for (int i = 0; i < model.n_joints(); ++i) {
    phi += z(i);
    p += g.link_lengths[static_cast<std::size_t>(i)] * Vec2(std::cos(phi), std::sin(phi));
    out.push_back(p);
  }
  return out;
}

/// Workspace points whose clearance defines the safety constraints of a state.
inline std::vector<Vec2> collision_points(const RobotModel & model, const VectorXd & z)
{
  detail::check_state(model, z);
  if (!model.is_arm()) return {z.head<2>()};

  const auto & g = model.arm();
  const int per  = g.spheres_per_link;
  std::vector<Vec2> out;
  out.reserve(static_cast<std::size_t>(model.points_per_state()));
  Vec2 joint = g.base;
  double phi = 0.0;
  for (int i = 0; i < model.n_joints(); ++i) {
    phi += z(i);
    const Vec2 link = g.link_lengths[static_cast<std::size_t>(i)] * Vec2(std::cos(phi), std::sin(phi));
    for (int s = 1; s <= per; ++s) out.push_back(joint + (static_cast<double>(s) / per) * link);
    joint += link;
  }
  return out;
}

/// d(point)/dz for every collision point (2 x state_dim each). For the arm the column
/// for joint k is the perpendicular of (point - position of joint k), zero for rates.
inline std::vector<Matrix2X> collision_points_jacobian(const RobotModel & model, const VectorXd & z)
{
  detail::check_state(model, z);
  const int ds = model.state_dim();
  if (!model.is_arm()) return {Matrix2X::Identity(2, ds)};

  const auto joints = joint_positions(model, z);
  const auto points = collision_points(model, z);
  const int per     = model.arm().spheres_per_link;
  std::vector<Matrix2X> out;
  out.reserve(points.size());
  for (std::size_t idx = 0; idx < points.size(); ++idx) {
    const int link = static_cast<int>(idx) / per;
    Matrix2X jac   = Matrix2X::Zero(2, ds);
    for (int k = 0; k <= link; ++k) {
      const Vec2 r = points[idx] - joints[static_cast<std::size_t>(k)];
      jac(0, k)    = -r.y();
      jac(1, k)    = r.x();
    }
    out.push_back(std::move(jac));
  }
  return out;
}

/// Configuration part of a state (positions / joint angles).
inline VectorXd configuration(const RobotModel & model, const VectorXd & z)
{
  detail::check_state(model, z);
  return z.head(model.config_dim());
}

/// State at rest for a configuration.
inline VectorXd rest_state(const RobotModel & model, const VectorXd & config)
{
  if (config.size() != model.config_dim()) throw ArgumentError("configuration dimension mismatch");
  VectorXd z = VectorXd::Zero(model.state_dim());
  z.head(model.config_dim()) = config;
  return z;
}

/// The world as seen by collision points: every obstacle grown by the body margin.
inline World collision_world(const World & world, const RobotModel & model)
{
  return world.inflated(model.body_margin());
}

/**
 * A state trajectory that is always the exact rollout of its inputs.
 *
 * Waypoints are indexed 0..steps(); waypoint 0 is z0.
 */
class Trajectory
{
public:
  Trajectory(RobotModel model, VectorXd z0, VectorXd u)
      : model_(std::move(model)), z0_(std::move(z0)), u_(std::move(u))
  {
    z_ = rollout(model_, z0_, u_);
  }

  [[nodiscard]] const RobotModel & model() const noexcept { return model_; }
  [[nodiscard]] Eigen::Index steps() const noexcept { return u_.size() / model_.input_dim(); }
  [[nodiscard]] Eigen::Index waypoints() const noexcept { return steps() + 1; }
  [[nodiscard]] const VectorXd & z0() const noexcept { return z0_; }
  [[nodiscard]] const VectorXd & inputs() const noexcept { return u_; }
  /// Stacked [z_1; ...; z_H].
  [[nodiscard]] const VectorXd & states() const noexcept { return z_; }

  [[nodiscard]] VectorXd state(Eigen::Index t) const
  {
    if (t == 0) return z0_;
    const Eigen::Index ds = model_.state_dim();
    return z_.segment((t - 1) * ds, ds);
  }

  [[nodiscard]] VectorXd input(Eigen::Index t) const
  {
    const Eigen::Index du = model_.input_dim();
    return u_.segment(t * du, du);
  }

  /// Inputs for steps [first, first + count).
  [[nodiscard]] VectorXd input_block(Eigen::Index first, Eigen::Index count) const
  {
    const Eigen::Index du = model_.input_dim();
    return u_.segment(first * du, count * du);
  }

  void set_inputs(VectorXd u)
  {
    z_ = rollout(model_, z0_, u);
    u_ = std::move(u);
  }

  /// Replace inputs of steps [first, first + count) and re-roll.
  void set_input_block(Eigen::Index first, const VectorXd & block)
  {
    const Eigen::Index du = model_.input_dim();
    VectorXd u            = u_;
    u.segment(first * du, block.size()) = block;
    set_inputs(std::move(u));
  }

  /// Replace several blocks at once with a single re-roll.
  void set_input_blocks(const std::vector<std::pair<Eigen::Index, VectorXd>> & blocks)
  {
    const Eigen::Index du = model_.input_dim();
    VectorXd u            = u_;
    for (const auto & [first, block] : blocks) u.segment(first * du, block.size()) = block;
    set_inputs(std::move(u));
  }

  /// Configurations of all waypoints, z0 first.
  [[nodiscard]] std::vector<VectorXd> configurations() const
  {
    std::vector<VectorXd> out;
    out.reserve(static_cast<std::size_t>(waypoints()));
    for (Eigen::Index t = 0; t < waypoints(); ++t) out.push_back(state(t).head(model_.config_dim()));
    return out;
  }

private:
  RobotModel model_;
  VectorXd z0_;
  VectorXd u_;
  VectorXd z_;
};

}  // namespace rrtsopt
