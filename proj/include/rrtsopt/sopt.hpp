#pragma once

/**
 * @file
 * @brief Segmented sequential convex optimization of an RRT* reference (RRT*-sOpt).
 *
 * The trajectory is cut at split points W = {w_0, ..., w_2N}. Odd iterations optimize
 * the segments [w_0, w_2], [w_2, w_4], ...; even iterations optimize [w_1, w_3], ...,
 * [w_{2N-3}, w_{2N-1}] and leave the head and tail splits alone. Every segment keeps
 * both end states fixed, so the segments of one iteration are independent QPs. Each QP
 * minimizes the full objective restricted to the segment
 *
 *     sum_t Q |z_t - z_goal|^2 + lambda sum_t |u_t|^2
 *
 * subject to the convex feasible set: every selected obstacle's signed distance,
 * linearized at the current states through the rollout Jacobian, must stay >= 0.
 *
 * After solving, adjacent segment pairs that barely improved are merged, the
 * trajectory is resampled to the horizon its new length calls for, and the split
 * points are carried over.
 */

#include <rrtsopt/errors.hpp>
#include <rrtsopt/parallel.hpp>
#include <rrtsopt/qp.hpp>
#include <rrtsopt/robots.hpp>
#include <rrtsopt/rrt_star.hpp>
#include <rrtsopt/world.hpp>

#include <Eigen/Core>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace rrtsopt {

using Eigen::Index;

struct SoptConfig
{
  int n_segments{5};
  double desired_speed{1.0};
  /// epsilon = eps_scale * H, used both for termination and for merging.
  double eps_scale{1e-3};
  int max_iterations{20};
  double Q_weight{1e-3};
  /// lambda, the input penalty.
  double R_weight{0.03};
  bool auto_merge{false};
  /// Obstacle selection radius rho; 0 picks 2 * speed * dt * segment_steps (times the
  /// arm reach for arms), capped by the world diagonal.
  double obstacle_margin{0.0};
  /// Off: keep the horizon fixed (test mode).
  bool resample{true};
  /// Segment workers; 0 = hardware concurrency.
  int threads{0};
  double qp_tolerance{1e-8};
  int qp_max_iter{200};

  void validate() const
  {
    if (n_segments < 1) throw ArgumentError("sopt: n_segments must be positive");
    if (!(desired_speed > 0.0)) throw ArgumentError("sopt: desired_speed must be positive");
    if (!(eps_scale > 0.0)) throw ArgumentError("sopt: eps_scale must be positive");
    if (max_iterations < 1) throw ArgumentError("sopt: max_iterations must be at least 1");
    if (!(Q_weight > 0.0)) throw ArgumentError("sopt: Q_weight must be positive");
    if (!(R_weight > 0.0)) throw ArgumentError("sopt: R_weight must be positive");
    if (!(obstacle_margin >= 0.0)) throw ArgumentError("sopt: obstacle_margin must be non-negative");
    if (threads < 0) throw ArgumentError("sopt: threads must be non-negative");
    if (!(qp_tolerance > 0.0)) throw ArgumentError("sopt: qp_tolerance must be positive");
    if (qp_max_iter < 1) throw ArgumentError("sopt: qp_max_iter must be positive");
  }
};

// ---------------------------------------------------------------------------------------
// Reference generation and resampling

/// Smallest H >= length / (speed * dt) such that (H - 1) is a multiple of 2N and H >= 2N + 1.
inline Index horizon_for(double length, double speed, double dt, int n_segments)
{
  const Index div = 2 * static_cast<Index>(n_segments);
  const double raw = length / (speed * dt);
  Index h          = std::max<Index>(static_cast<Index>(std::ceil(raw - 1e-9)), div + 1);
  h                = 1 + div * ((h - 1 + div - 1) / div);
  return h;
}

namespace detail {

/// `count` points at uniform arc length along the polyline; the end points are kept exactly.
inline std::vector<VectorXd> resample_polyline(const std::vector<VectorXd> & pts, Index count)
{
  std::vector<double> cum(pts.size(), 0.0);
  for (std::size_t i = 1; i < pts.size(); ++i) cum[i] = cum[i - 1] + (pts[i] - pts[i - 1]).norm();
  const double total = cum.back();

  std::vector<VectorXd> out;
  out.reserve(static_cast<std::size_t>(count));
  out.push_back(pts.front());
  std::size_t seg = 1;
  for (Index k = 1; k + 1 < count; ++k) {
    const double s = total * static_cast<double>(k) / static_cast<double>(count - 1);
    while (seg + 1 < pts.size() && cum[seg] < s) ++seg;
    const double len = cum[seg] - cum[seg - 1];
    const double a   = len > 0.0 ? std::clamp((s - cum[seg - 1]) / len, 0.0, 1.0) : 1.0;
    out.push_back(pts[seg - 1] + a * (pts[seg] - pts[seg - 1]));
  }
  out.push_back(pts.back());
  return out;
}

/// Number of arc-length samples needed for a trajectory with H waypoints.
inline Index samples_for(const RobotModel & model, Index h) { return model.is_arm() ? h - 1 : h; }

/**
 * Trajectory whose rollout passes through `samples`.
 *
 * Point mass: waypoint t is samples[t]. Arm: rest at samples[0], then waypoint t is
 * samples[t-1], ending at rest on samples.back(); rates are first differences and
 * accelerations second differences.
 */
inline Trajectory trajectory_through(const RobotModel & model, const std::vector<VectorXd> & samples)
{
  const double dt = model.dt();
  const Index du  = model.input_dim();
  const auto ns   = static_cast<Index>(samples.size());

  if (!model.is_arm()) {
    VectorXd u((ns - 1) * du);
    for (Index t = 0; t + 1 < ns; ++t) {
      u.segment(t * du, du) = (samples[static_cast<std::size_t>(t + 1)] - samples[static_cast<std::size_t>(t)]) / dt;
    }
    return Trajectory(model, samples.front(), std::move(u));
  }

  const Index h = ns + 1;
  std::vector<VectorXd> omega(static_cast<std::size_t>(h), VectorXd::Zero(du));
  for (Index t = 1; t + 1 < h; ++t) {
    omega[static_cast<std::size_t>(t)] =
        (samples[static_cast<std::size_t>(t)] - samples[static_cast<std::size_t>(t - 1)]) / dt;
  }
  VectorXd u((h - 1) * du);
  for (Index t = 0; t + 1 < h; ++t) {
    u.segment(t * du, du) = (omega[static_cast<std::size_t>(t + 1)] - omega[static_cast<std::size_t>(t)]) / dt;
  }
  return Trajectory(model, rest_state(model, samples.front()), std::move(u));
}

}  // namespace detail

inline Trajectory generate_reference(const Path & path, const RobotModel & model, const SoptConfig & cfg)
{
  cfg.validate();
  if (path.waypoints.size() < 2) throw DegeneratePathError("reference: path needs at least two waypoints");
  for (const auto & w : path.waypoints) {
    if (w.size() != model.config_dim()) throw ArgumentError("reference: waypoint dimension mismatch");
  }
  const double length = path_length(path.waypoints);
  if (!(length > 1e-12)) throw DegeneratePathError("reference: path has zero length");

  const Index h = horizon_for(length, cfg.desired_speed, model.dt(), cfg.n_segments);
  return detail::trajectory_through(model, detail::resample_polyline(path.waypoints, detail::samples_for(model, h)));
}

struct ResampleResult
{
  Trajectory trajectory;
  bool resampled{false};
  bool degenerate{false};
};

/// Re-times the trajectory for its current length and `n_segments`. Leaves it untouched
/// when the horizon would not change or the configuration path has (near) zero length.
inline ResampleResult resample_traj(const Trajectory & traj, const RobotModel & model, const SoptConfig & cfg,
                                    int n_segments)
{
  const auto configs  = traj.configurations();
  const double length = path_length(configs);
  if (!(length > 1e-9)) return {traj, false, true};
  const Index h = horizon_for(length, cfg.desired_speed, model.dt(), n_segments);
  if (h == traj.waypoints()) return {traj, false, false};
  return {detail::trajectory_through(model, detail::resample_polyline(configs, detail::samples_for(model, h))), true,
          false};
}

// ---------------------------------------------------------------------------------------
// Split schedule

enum class SplitMode { odd, even };

/// Waypoint index range [first, last]; `split` is the position of `first` in W.
struct Segment
{
  Index first{0};
  Index last{0};
  std::size_t split{0};

  [[nodiscard]] Index steps() const { return last - first; }
};

struct SplitSchedule
{
  std::vector<Index> W;
  SplitMode mode{SplitMode::odd};
  int iteration{0};

  [[nodiscard]] int segment_count() const { return static_cast<int>((W.size() - 1) / 2); }

  [[nodiscard]] std::vector<Segment> segments(SplitMode m) const
  {
    std::vector<Segment> out;
    const std::size_t begin = m == SplitMode::odd ? 0 : 1;
    const std::size_t end   = m == SplitMode::odd ? W.size() - 1 : W.size() - 2;
    for (std::size_t i = begin; i + 2 <= end; i += 2) out.push_back(Segment{W[i], W[i + 2], i});
    return out;
  }

  [[nodiscard]] std::vector<Segment> active_segments() const { return segments(mode); }
};

inline SplitSchedule split_reference(const Trajectory & traj, int n_segments)
{
  if (n_segments < 1) throw ArgumentError("split_reference: n_segments must be positive");
  const Index last = traj.waypoints() - 1;
  const Index div  = 2 * static_cast<Index>(n_segments);
  if (last % div != 0 || last < div) {
    throw InternalError("split_reference: H - 1 = " + std::to_string(last) + " is not a positive multiple of " +
                        std::to_string(div));
  }
  SplitSchedule s;
  for (Index i = 0; i <= div; ++i) s.W.push_back(i * (last / div));
  return s;
}

/// Carries `prior` (possibly merged) over to the trajectory's horizon by proportional
/// rescaling, then restores strict monotonicity with pinned end points.
inline SplitSchedule split_reference(const Trajectory & traj, const SplitSchedule & prior)
{
  const Index last     = traj.waypoints() - 1;
  const Index old_last = prior.W.back();
  const auto n         = prior.W.size();
  if (n < 3 || old_last <= 0) throw InternalError("split_reference: malformed prior schedule");
  if (last < static_cast<Index>(n - 1)) throw InternalError("split_reference: horizon too short for the schedule");

  SplitSchedule s = prior;
  if (last == old_last) return s;
  for (std::size_t i = 0; i < n; ++i) {
    s.W[i] = static_cast<Index>(std::llround(static_cast<double>(prior.W[i]) * static_cast<double>(last) /
                                             static_cast<double>(old_last)));
  }
  s.W.front() = 0;
  s.W.back()  = last;
  for (std::size_t i = 1; i + 1 < n; ++i) s.W[i] = std::max(s.W[i], s.W[i - 1] + 1);
  for (std::size_t i = n - 1; i-- > 1;) s.W[i] = std::min(s.W[i], s.W[i + 1] - 1);
  return s;
}

// ---------------------------------------------------------------------------------------
// Costs

/// sum_{t=first+1}^{last} Q |z_t - z_goal|^2 + lambda sum_{t=first}^{last-1} |u_t|^2
inline double trajectory_cost(const Trajectory & traj, const VectorXd & z_goal, const SoptConfig & cfg, Index first,
                              Index last)
{
  double cost = 0.0;
  for (Index t = first + 1; t <= last; ++t) cost += cfg.Q_weight * (traj.state(t) - z_goal).squaredNorm();
  cost += cfg.R_weight * traj.input_block(first, last - first).squaredNorm();
  return cost;
}

inline double trajectory_cost(const Trajectory & traj, const VectorXd & z_goal, const SoptConfig & cfg)
{
  return trajectory_cost(traj, z_goal, cfg, 0, traj.waypoints() - 1);
}

inline double iter_prog(double prev, double curr) { return std::abs(prev - curr); }

/// 2 eps H / N_seg with eps = eps_scale * H.
inline double merge_threshold(double eps_scale, Index horizon, int n_segments)
{
  const double h = static_cast<double>(horizon);
  return 2.0 * eps_scale * h * h / n_segments;
}

/// Merges adjacent active-mode segment pairs whose progress is within `threshold`,
/// scanning left to right; a segment takes part in at most one merge per call.
/// `progress[j]` belongs to the pair (j, j + 1) of schedule.active_segments().
inline SplitSchedule merge_step(const SplitSchedule & schedule, const std::vector<double> & progress, double threshold)
{
  const auto segs = schedule.active_segments();
  if (progress.size() + 1 != std::max<std::size_t>(segs.size(), 1)) {
    throw ArgumentError("merge_step: expected one progress value per adjacent segment pair");
  }
  std::vector<char> drop(schedule.W.size(), 0);
  int count = schedule.segment_count();
  for (std::size_t j = 0; j + 1 < segs.size();) {
    if (count > 1 && progress[j] <= threshold) {
      drop[segs[j].split + 1]     = 1;
      drop[segs[j + 1].split + 1] = 1;
      --count;
      j += 2;
    } else {
      ++j;
    }
  }
  SplitSchedule out = schedule;
  out.W.clear();
  for (std::size_t i = 0; i < schedule.W.size(); ++i) {
    if (!drop[i]) out.W.push_back(schedule.W[i]);
  }
  return out;
}

// ---------------------------------------------------------------------------------------
// Obstacle selection and convex feasible set

inline double default_obstacle_margin(const World & world, const RobotModel & model, const SoptConfig & cfg,
                                      Index segment_steps)
{
  double reach = 1.0;
  if (model.is_arm()) {
    reach = 0.0;
    for (double l : model.arm().link_lengths) reach += l;
  }
  const double rho = 2.0 * cfg.desired_speed * model.dt() * static_cast<double>(segment_steps) * reach;
  return std::min(rho, world.bounds().diagonal());
}

/// Obstacles within rho of any collision point of the given states, in world order.
inline std::vector<int> obs_select(const World & world, const std::vector<VectorXd> & segment_states,
                                   const RobotModel & model, const SoptConfig & cfg)
{
  if (segment_states.empty()) throw ArgumentError("obs_select: empty segment");
  const double rho =
      cfg.obstacle_margin > 0.0
          ? cfg.obstacle_margin
          : default_obstacle_margin(world, model, cfg, std::max<Index>(1, static_cast<Index>(segment_states.size()) - 1));
  const double margin = model.body_margin();

  std::vector<std::vector<Vec2>> points;
  points.reserve(segment_states.size());
  for (const auto & z : segment_states) points.push_back(collision_points(model, z));

  std::vector<int> out;
  for (const auto & o : world.obstacles()) {
    bool near = false;
    for (const auto & pts : points) {
      for (const auto & p : pts) {
        if (o.signed_distance(p) - margin < rho) {
          near = true;
          break;
        }
      }
      if (near) break;
    }
    if (near) out.push_back(o.id());
  }
  return out;
}

struct CfsRow
{
  int obstacle_id;
  Index step;   ///< 1..segment steps
  Index point;  ///< collision point index
};

/// Rows A u >= b over the segment inputs, with the safety value at the linearization point.
struct ConvexFeasibleSet
{
  MatrixXd A;
  VectorXd b;
  VectorXd h_ref;
  std::vector<CfsRow> provenance;

  [[nodiscard]] Index rows() const { return A.rows(); }
};

/**
 * Linearizes h_j(p(z_t)) >= 0 for every selected obstacle j, step t and collision point p
 * around the states `lin_states` (z_1..z_hs) paired with the inputs `u_ref`:
 *   h(z_t) + grad_h^T dp/dz dz_t/du (u - u_ref) >= 0.
 * `world` is the raw world; the robot's body margin is applied here.
 */
inline ConvexFeasibleSet build_cfs_at(const World & world, const RobotModel & model, const VectorXd & lin_states,
                                      const VectorXd & u_ref, const std::vector<int> & selected)
{
  const Index du  = model.input_dim();
  const Index ds  = model.state_dim();
  const Index hs  = detail::horizon_of(model, u_ref);
  if (lin_states.size() != hs * ds) throw InternalError("build_cfs_at: linearization states do not match the inputs");
  const Index ppt = model.points_per_state();
  const double margin = model.body_margin();

  ConvexFeasibleSet cfs;
  const Index rows = static_cast<Index>(selected.size()) * hs * ppt;
  cfs.A = MatrixXd::Zero(rows, hs * du);
  cfs.b.resize(rows);
  cfs.h_ref.resize(rows);
  cfs.provenance.reserve(static_cast<std::size_t>(rows));
  if (rows == 0) return cfs;

  const VectorXd & states = lin_states;
  const MatrixXd jac      = rollout_jacobian(model, hs);
  std::vector<std::vector<Vec2>> points(static_cast<std::size_t>(hs));
  std::vector<std::vector<Matrix2X>> point_jac(static_cast<std::size_t>(hs));
  for (Index t = 0; t < hs; ++t) {
    const VectorXd z = states.segment(t * ds, ds);
    points[static_cast<std::size_t>(t)]    = collision_points(model, z);
    point_jac[static_cast<std::size_t>(t)] = collision_points_jacobian(model, z);
  }

  Index r = 0;
  for (int id : selected) {
    const Obstacle & o = world.obstacle(id);
    for (Index t = 0; t < hs; ++t) {
      const auto & pts = points[static_cast<std::size_t>(t)];
      const auto & pj  = point_jac[static_cast<std::size_t>(t)];
      const auto cols  = (t + 1) * du;
      for (Index p = 0; p < ppt; ++p) {
        const Vec2 & x = pts[static_cast<std::size_t>(p)];
        const double h = o.signed_distance(x) - margin;
        const Eigen::RowVectorXd dz = o.gradient(x).transpose() * pj[static_cast<std::size_t>(p)];
        cfs.A.row(r).head(cols)     = dz * jac.block(t * ds, 0, ds, cols);
        cfs.b(r)                    = cfs.A.row(r).head(cols).dot(u_ref.head(cols)) - h;
        cfs.h_ref(r)                = h;
        cfs.provenance.push_back(CfsRow{id, t + 1, p});
        ++r;
      }
    }
  }
  return cfs;
}

/// CFS linearized at the rollout of u_ref from z_start (the exact pairing used after the
/// first iteration).
inline ConvexFeasibleSet build_cfs(const World & world, const RobotModel & model, const VectorXd & z_start,
                                   const VectorXd & u_ref, const std::vector<int> & selected)
{
  return build_cfs_at(world, model, rollout(model, z_start, u_ref), u_ref, selected);
}

// ---------------------------------------------------------------------------------------
// Segment subproblem

struct SegmentSolution
{
  VectorXd u;
  double cost{std::numeric_limits<double>::quiet_NaN()};
  qp::QpStatus status{qp::QpStatus::infeasible};
  int slack_rows{0};
  double kkt_residual{std::numeric_limits<double>::infinity()};
};

/// Rows whose safety value at the reference is below this get a slack variable.
inline constexpr double kSlackThreshold = -1e-6;

/**
 * Minimizes the segment objective over the segment inputs subject to the CFS rows, the
 * input box and z_last = z_target. Violated reference rows are relaxed with penalized
 * non-negative slacks.
 */
inline SegmentSolution solve_segment(const RobotModel & model, const VectorXd & z_start, const VectorXd & u_ref,
                                     const ConvexFeasibleSet & cfs, const VectorXd & z_target,
                                     const VectorXd & z_goal, const SoptConfig & cfg)
{
  const Index du = model.input_dim();
  const Index ds = model.state_dim();
  const Index hs = detail::horizon_of(model, u_ref);
  const Index nu = hs * du;
  if (cfs.A.rows() > 0 && cfs.A.cols() != nu) throw InternalError("solve_segment: CFS width mismatch");
  if (z_target.size() != ds || z_goal.size() != ds) throw InternalError("solve_segment: state dimension mismatch");

  std::vector<Index> slack_rows;
  for (Index r = 0; r < cfs.rows(); ++r) {
    if (cfs.h_ref(r) < kSlackThreshold) slack_rows.push_back(r);
  }
  const auto ns = static_cast<Index>(slack_rows.size());
  const Index n = nu + ns;

  const MatrixXd jac = rollout_jacobian(model, hs);
  VectorXd offset    = free_response(model, z_start, hs);
  for (Index t = 0; t < hs; ++t) offset.segment(t * ds, ds) -= z_goal;

  const double w = 1e4 * (cfg.Q_weight + cfg.R_weight);
  qp::QpProblem prob;
  prob.P = MatrixXd::Zero(n, n);
  prob.q = VectorXd::Zero(n);
  prob.P.topLeftCorner(nu, nu).noalias() = 2.0 * cfg.Q_weight * jac.transpose() * jac;
  prob.P.topLeftCorner(nu, nu).diagonal().array() += 2.0 * cfg.R_weight;
  prob.q.head(nu).noalias() = 2.0 * cfg.Q_weight * jac.transpose() * offset;
  if (ns > 0) {
    prob.P.bottomRightCorner(ns, ns).diagonal().setConstant(w);
    prob.q.tail(ns).setConstant(w);
  }

  const Index m = cfs.rows() + ns + 2 * nu;
  prob.G        = MatrixXd::Zero(m, n);
  prob.h        = VectorXd::Zero(m);
  if (cfs.rows() > 0) {
    prob.G.topLeftCorner(cfs.rows(), nu) = cfs.A;
    prob.h.head(cfs.rows())              = cfs.b;
  }
  for (Index k = 0; k < ns; ++k) {
    prob.G(slack_rows[static_cast<std::size_t>(k)], nu + k) = 1.0;
    prob.G(cfs.rows() + k, nu + k)                          = 1.0;
  }
  const Index box = cfs.rows() + ns;
  for (Index i = 0; i < nu; ++i) {
    prob.G(box + i, i)      = 1.0;
    prob.h(box + i)         = model.input_lo()(i % du);
    prob.G(box + nu + i, i) = -1.0;
    prob.h(box + nu + i)    = -model.input_hi()(i % du);
  }

  prob.E = MatrixXd::Zero(ds, n);
  prob.E.leftCols(nu) = jac.bottomRows(ds);
  prob.d = z_target - offset.tail(ds) - z_goal;

  VectorXd warm(n);
  warm.head(nu) = u_ref;
  for (Index k = 0; k < ns; ++k) {
    const Index r   = slack_rows[static_cast<std::size_t>(k)];
    warm(nu + k)    = std::max(0.0, cfs.b(r) - cfs.A.row(r).dot(u_ref));
  }

  const auto sol = qp::solve(prob, qp::QpOptions{cfg.qp_tolerance, cfg.qp_max_iter}, warm);

  const bool reference_feasible =
      ns == 0 && (u_ref.array() >= VectorXd(model.input_lo().replicate(hs, 1)).array() - 1e-9).all() &&
      (u_ref.array() <= VectorXd(model.input_hi().replicate(hs, 1)).array() + 1e-9).all() &&
      (cfs.rows() == 0 || (cfs.A * u_ref - cfs.b).minCoeff() >= -1e-9) &&
      (prob.E.leftCols(nu) * u_ref - prob.d).cwiseAbs().maxCoeff() <= 1e-9;
  if (reference_feasible && sol.status == qp::QpStatus::infeasible) {
    throw InternalError("solve_segment: QP reported infeasible although the reference inputs are feasible");
  }

  SegmentSolution out;
  out.status       = sol.status;
  out.slack_rows   = static_cast<int>(ns);
  out.kkt_residual = sol.kkt_residual;
  out.u            = sol.u.head(nu);
  const VectorXd dev = jac * out.u + offset;
  out.cost = cfg.Q_weight * dev.squaredNorm() + cfg.R_weight * out.u.squaredNorm();
  return out;
}

// ---------------------------------------------------------------------------------------
// Audits

/// Minimum signed distance (body margin included) over all collision points of the
/// given waypoint range.
inline double trajectory_clearance(const World & world, const RobotModel & model, const Trajectory & traj,
                                   Index first = 0, Index last = -1)
{
  if (last < 0) last = traj.waypoints() - 1;
  const double margin = model.body_margin();
  double best         = std::numeric_limits<double>::infinity();
  for (Index t = first; t <= last; ++t) {
    for (const auto & p : collision_points(model, traj.state(t))) {
      for (const auto & o : world.obstacles()) best = std::min(best, o.signed_distance(p) - margin);
    }
  }
  return best;
}

// ---------------------------------------------------------------------------------------
// Main loop

struct PhaseTimings
{
  double reference{0.0};
  double optimize{0.0};
  double merge{0.0};
  double resample{0.0};
  double total{0.0};
};

struct PlanResult
{
  /// Optimized trajectory of the last iteration (before any resampling).
  Trajectory trajectory;
  Trajectory reference;
  double reference_cost{0.0};
  std::vector<double> cost_history;
  std::vector<int> segment_count_history;
  std::vector<Index> horizon_history;
  int iterations{0};
  bool converged{false};
  /// Split points the returned trajectory was optimized with.
  SplitSchedule schedule;
  int segment_failures{0};
  PhaseTimings timings;
};

namespace detail {

struct SegmentOutcome
{
  bool solved{false};
  bool moved{false};
  VectorXd u;
};

inline std::vector<VectorXd> segment_states(const Trajectory & traj, const Segment & seg)
{
  std::vector<VectorXd> out;
  for (Index t = seg.first; t <= seg.last; ++t) out.push_back(traj.state(t));
  return out;
}

/// Solves one segment and backs the step off towards the current inputs while it would
/// lose clearance they had.
inline SegmentOutcome optimize_segment(const World & world, const RobotModel & model, const Trajectory & traj,
                                       const Segment & seg, const VectorXd & z_goal, const SoptConfig & cfg)
{
  const Index hs          = seg.steps();
  const VectorXd z_start  = traj.state(seg.first);
  const VectorXd u_cur    = traj.input_block(seg.first, hs);
  const VectorXd z_target = seg.last == traj.waypoints() - 1 ? z_goal : traj.state(seg.last);

  const auto selected = obs_select(world, segment_states(traj, seg), model, cfg);
  const auto cfs      = build_cfs(world, model, z_start, u_cur, selected);
  const auto sol      = solve_segment(model, z_start, u_cur, cfs, z_target, z_goal, cfg);

  SegmentOutcome out;
  out.u = u_cur;
  if (sol.status != qp::QpStatus::optimal) return out;
  out.solved = true;

  const Trajectory cur_seg(model, z_start, u_cur);
  const double floor = std::min(0.0, trajectory_clearance(world, model, cur_seg, 1)) - 1e-9;
  VectorXd step      = sol.u - u_cur;
  for (int attempt = 0; attempt < 10; ++attempt) {
    const Trajectory cand(model, z_start, u_cur + step);
    if (trajectory_clearance(world, model, cand, 1) >= floor) {
      out.u     = u_cur + step;
      out.moved = true;
      return out;
    }
    step *= 0.5;
  }
  return out;
}

inline double seconds_since(std::chrono::steady_clock::time_point t0)
{
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

}  // namespace detail

/// Goal state of a configuration path (at rest for the arm).
inline VectorXd goal_state(const RobotModel & model, const Path & path)
{
  return rest_state(model, path.waypoints.back());
}

inline PlanResult plan(const World & world, const RobotModel & model, const Path & path, const SoptConfig & cfg)
{
  using clock = std::chrono::steady_clock;
  cfg.validate();
  const auto t_start = clock::now();

  Trajectory traj = generate_reference(path, model, cfg);
  {
    const World cworld = collision_world(world, model);
    if (!detail::configuration_free(cworld, model, path.waypoints.front()) ||
        !detail::configuration_free(cworld, model, path.waypoints.back())) {
      throw PlanningFailure("sopt: reference path starts or ends in collision");
    }
  }
  const VectorXd z_goal = goal_state(model, path);
  const Trajectory reference = traj;
  const double reference_cost = trajectory_cost(reference, z_goal, cfg);
  SplitSchedule sched = split_reference(traj, cfg.n_segments);

  PhaseTimings timings;
  timings.reference = detail::seconds_since(t_start);

  std::optional<Trajectory> best;
  SplitSchedule best_sched = sched;
  std::vector<double> cost_history;
  std::vector<int> count_history;
  std::vector<Index> horizon_history;
  double prev_cost  = reference_cost;
  bool converged    = false;
  int failed_streak = 0;
  int failures      = 0;

  for (int k = 1; k <= cfg.max_iterations; ++k) {
    sched.iteration = k;
    sched.mode      = (sched.segment_count() == 1 || k % 2 == 1) ? SplitMode::odd : SplitMode::even;
    const auto segs = sched.active_segments();

    auto t0 = clock::now();
    std::vector<double> before(segs.size());
    for (std::size_t i = 0; i < segs.size(); ++i) before[i] = trajectory_cost(traj, z_goal, cfg, segs[i].first, segs[i].last);

    std::vector<detail::SegmentOutcome> outcome(segs.size());
    parallel_for(segs.size(), static_cast<std::size_t>(cfg.threads), [&](std::size_t i) {
      outcome[i] = detail::optimize_segment(world, model, traj, segs[i], z_goal, cfg);
    });

    std::vector<std::pair<Index, VectorXd>> blocks;
    int solved = 0;
    for (std::size_t i = 0; i < segs.size(); ++i) {
      if (outcome[i].solved) ++solved;
      if (outcome[i].moved) blocks.emplace_back(segs[i].first, std::move(outcome[i].u));
    }
    failures += static_cast<int>(segs.size()) - solved;
    failed_streak = solved == 0 ? failed_streak + 1 : 0;
    if (failed_streak >= 3) {
      throw PlanningFailure("sopt: every segment failed for 3 consecutive iterations (iteration " +
                            std::to_string(k) + ", " + std::to_string(segs.size()) + " segments, horizon " +
                            std::to_string(traj.waypoints()) + ")");
    }
    if (!blocks.empty()) traj.set_input_blocks(blocks);
    timings.optimize += detail::seconds_since(t0);

    const double cost = trajectory_cost(traj, z_goal, cfg);
    cost_history.push_back(cost);
    count_history.push_back(sched.segment_count());
    horizon_history.push_back(traj.waypoints());
    best       = traj;
    best_sched = sched;

    if (std::abs(cost - prev_cost) <= cfg.eps_scale * static_cast<double>(traj.waypoints())) {
      converged = true;
      break;
    }
    prev_cost = cost;
    if (k == cfg.max_iterations) break;

    t0 = clock::now();
    if (cfg.auto_merge && k >= 2 && segs.size() >= 2) {
      std::vector<double> progress(segs.size() - 1);
      for (std::size_t j = 0; j + 1 < segs.size(); ++j) {
        const double after = trajectory_cost(traj, z_goal, cfg, segs[j].first, segs[j].last) +
                             trajectory_cost(traj, z_goal, cfg, segs[j + 1].first, segs[j + 1].last);
        progress[j] = iter_prog(before[j] + before[j + 1], after);
      }
      sched = merge_step(sched, progress, merge_threshold(cfg.eps_scale, traj.waypoints(), sched.segment_count()));
    }
    timings.merge += detail::seconds_since(t0);

    if (cfg.resample) {
      t0 = clock::now();
      auto r = resample_traj(traj, model, cfg, sched.segment_count());
      const double floor = std::min(0.0, trajectory_clearance(world, model, traj)) - 1e-9;
      if (r.resampled && r.trajectory.waypoints() < traj.waypoints() &&
          trajectory_clearance(world, model, r.trajectory) >= floor) {
        traj  = std::move(r.trajectory);
        sched = split_reference(traj, sched);
      }
      timings.resample += detail::seconds_since(t0);
    }
  }

  timings.total = detail::seconds_since(t_start);
  PlanResult out{*best, reference, reference_cost, std::move(cost_history), std::move(count_history),
                 std::move(horizon_history), 0, converged, best_sched, failures, timings};
  out.iterations = static_cast<int>(out.cost_history.size());
  return out;
}

}  // namespace rrtsopt
