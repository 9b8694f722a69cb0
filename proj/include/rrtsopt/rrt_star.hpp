#pragma once

/**
 * @file
 * @brief Multi-tree RRT* in configuration space.
 *
 * A batch grows `n_trees` independent trees, each with its own RNG stream and the full
 * sample budget, and keeps the shortest goal-connected path (lowest tree index on ties).
 * Planning ends with the first batch in which any tree reached the goal; otherwise the
 * batch is repeated with fresh seeds.
 */

#include <rrtsopt/errors.hpp>
#include <rrtsopt/parallel.hpp>
#include <rrtsopt/robots.hpp>
#include <rrtsopt/world.hpp>

#include <Eigen/Core>

#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <optional>
#include <random>
#include <string>
#include <vector>

namespace rrtsopt {

struct RRTConfig
{
  int n_samples{2000};
  int n_trees{8};
  double steer_step{0.5};
  double goal_bias{0.05};
  double rewire_gamma{10.0};
  double edge_check_resolution{0.05};
  std::uint64_t seed{0};
  /// Batches to try before giving up.
  int max_batches{50};
  /// Worker threads for the trees of one batch; 0 = hardware concurrency.
  int threads{0};

  void validate() const
  {
    if (n_samples < 1) throw ArgumentError("rrt: n_samples must be positive");
    if (n_trees < 1) throw ArgumentError("rrt: n_trees must be positive");
    if (!(steer_step > 0.0)) throw ArgumentError("rrt: steer_step must be positive");
    if (!(goal_bias >= 0.0 && goal_bias <= 1.0)) throw ArgumentError("rrt: goal_bias must lie in [0, 1]");
    if (!(rewire_gamma > 0.0)) throw ArgumentError("rrt: rewire_gamma must be positive");
    if (!(edge_check_resolution > 0.0) || edge_check_resolution > steer_step) {
      throw ArgumentError("rrt: edge_check_resolution must be in (0, steer_step]");
    }
    if (max_batches < 1) throw ArgumentError("rrt: max_batches must be positive");
    if (threads < 0) throw ArgumentError("rrt: threads must be non-negative");
  }
};

struct TreeNode
{
  VectorXd config;
  std::optional<std::size_t> parent;
  double cost_from_root{0.0};
  std::vector<std::size_t> children;
};

class Tree
{
public:
  explicit Tree(VectorXd root) { nodes_.push_back(TreeNode{std::move(root), std::nullopt, 0.0, {}}); }

  [[nodiscard]] std::size_t size() const noexcept { return nodes_.size(); }
  [[nodiscard]] const TreeNode & node(std::size_t i) const { return nodes_.at(i); }
  [[nodiscard]] const std::vector<TreeNode> & nodes() const noexcept { return nodes_; }
  [[nodiscard]] std::optional<std::size_t> goal_index() const noexcept { return goal_; }
  void set_goal_index(std::size_t i) { goal_ = i; }

  [[nodiscard]] std::size_t nearest(const VectorXd & q) const
  {
    std::size_t best = 0;
    double best_d    = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
      const double d = (nodes_[i].config - q).squaredNorm();
      if (d < best_d) {
        best_d = d;
        best   = i;
      }
    }
    return best;
  }

  [[nodiscard]] std::vector<std::size_t> near(const VectorXd & q, double radius) const
  {
    std::vector<std::size_t> out;
    const double r2 = radius * radius;
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
      if ((nodes_[i].config - q).squaredNorm() <= r2) out.push_back(i);
    }
    return out;
  }

  std::size_t add(VectorXd config, std::size_t parent)
  {
    const double cost = nodes_.at(parent).cost_from_root + (config - nodes_[parent].config).norm();
    nodes_.push_back(TreeNode{std::move(config), parent, cost, {}});
    const std::size_t id = nodes_.size() - 1;
    nodes_[parent].children.push_back(id);
    return id;
  }

  /// Moves `i` under `new_parent` and recomputes the costs of its whole subtree.
  void reparent(std::size_t i, std::size_t new_parent)
  {
    auto & old_children = nodes_[*nodes_[i].parent].children;
    std::erase(old_children, i);
    nodes_[i].parent = new_parent;
    nodes_[new_parent].children.push_back(i);

    std::vector<std::size_t> stack{i};
    while (!stack.empty()) {
      const std::size_t k = stack.back();
      stack.pop_back();
      const auto & p           = nodes_[*nodes_[k].parent];
      nodes_[k].cost_from_root = p.cost_from_root + (nodes_[k].config - p.config).norm();
      for (std::size_t c : nodes_[k].children) stack.push_back(c);
    }
  }

  /// Root-to-node configurations.
  [[nodiscard]] std::vector<VectorXd> path_to(std::size_t i) const
  {
    std::vector<VectorXd> out;
    for (std::optional<std::size_t> k = i; k; k = nodes_[*k].parent) out.push_back(nodes_[*k].config);
    return {out.rbegin(), out.rend()};
  }

private:
  std::vector<TreeNode> nodes_;
  std::optional<std::size_t> goal_;
};

struct Path
{
  std::vector<VectorXd> waypoints;
  double length{0.0};
};

inline double path_length(const std::vector<VectorXd> & waypoints)
{
  double len = 0.0;
  for (std::size_t i = 1; i < waypoints.size(); ++i) len += (waypoints[i] - waypoints[i - 1]).norm();
  return len;
}

inline Path make_path(std::vector<VectorXd> waypoints)
{
  const double len = path_length(waypoints);
  return Path{std::move(waypoints), len};
}

namespace detail {

/// `cworld` must already carry the robot's body margin.
inline bool configuration_free(const World & cworld, const RobotModel & model, const VectorXd & q)
{
  const auto pts = collision_points(model, rest_state(model, q));
  for (const auto & o : cworld.obstacles()) {
    for (const auto & p : pts) {
      if (o.signed_distance(p) < 0.0) return false;
    }
  }
  return true;
}

inline bool edge_free(const World & cworld, const RobotModel & model, const VectorXd & a, const VectorXd & b,
                      double resolution)
{
  if (cworld.empty()) return true;
  const double len = (b - a).norm();
  const auto steps = std::max<long>(1, static_cast<long>(std::ceil(len / resolution)));
  for (long i = 0; i <= steps; ++i) {
    const double s = static_cast<double>(i) / static_cast<double>(steps);
    if (!configuration_free(cworld, model, a + s * (b - a))) return false;
  }
  return true;
}

inline std::uint64_t splitmix64(std::uint64_t x)
{
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

struct SamplingBox
{
  VectorXd lo;
  VectorXd hi;
};

inline SamplingBox sampling_box(const World & world, const RobotModel & model, const VectorXd & start,
                                const VectorXd & goal)
{
  SamplingBox box;
  if (model.is_arm()) {
    box.lo = VectorXd::Constant(model.config_dim(), -std::numbers::pi);
    box.hi = VectorXd::Constant(model.config_dim(), std::numbers::pi);
  } else {
    box.lo = world.bounds().lo;
    box.hi = world.bounds().hi;
  }
  box.lo = box.lo.cwiseMin(start).cwiseMin(goal);
  box.hi = box.hi.cwiseMax(start).cwiseMax(goal);
  return box;
}

inline double rewire_radius(const RRTConfig & cfg, std::size_t n, int dim)
{
  const double nn = static_cast<double>(std::max<std::size_t>(n, 2));
  return std::min(cfg.steer_step, cfg.rewire_gamma * std::pow(std::log(nn) / nn, 1.0 / dim));
}

/// Inserts q (already known to be reachable from `fallback_parent`) with the cheapest
/// collision-free parent in the rewiring ball, then rewires the ball through it.
inline std::size_t insert_node(Tree & tree, const VectorXd & q, std::size_t fallback_parent, const World & cworld,
                               const RobotModel & model, const RRTConfig & cfg)
{
  const double radius = rewire_radius(cfg, tree.size() + 1, static_cast<int>(q.size()));
  const auto ball     = tree.near(q, radius);

  std::size_t parent = fallback_parent;
  double best        = tree.node(parent).cost_from_root + (q - tree.node(parent).config).norm();
  for (std::size_t i : ball) {
    if (i == fallback_parent) continue;
    const double c = tree.node(i).cost_from_root + (q - tree.node(i).config).norm();
    if (c < best && edge_free(cworld, model, tree.node(i).config, q, cfg.edge_check_resolution)) {
      best   = c;
      parent = i;
    }
  }
  const std::size_t id = tree.add(q, parent);

  for (std::size_t i : ball) {
    if (i == parent || i == 0) continue;
    const double via = tree.node(id).cost_from_root + (tree.node(i).config - q).norm();
    if (via < tree.node(i).cost_from_root &&
        edge_free(cworld, model, q, tree.node(i).config, cfg.edge_check_resolution)) {
      tree.reparent(i, id);
    }
  }
  return id;
}

inline std::optional<std::size_t> extend(Tree & tree, const VectorXd & sample, const World & cworld,
                                         const RobotModel & model, const RRTConfig & cfg)
{
  const std::size_t near_idx = tree.nearest(sample);
  const VectorXd & from      = tree.node(near_idx).config;
  const double dist          = (sample - from).norm();
  if (dist <= 0.0) return std::nullopt;
  const VectorXd q = dist <= cfg.steer_step ? sample : VectorXd(from + (cfg.steer_step / dist) * (sample - from));
  if (!edge_free(cworld, model, from, q, cfg.edge_check_resolution)) return std::nullopt;
  return insert_node(tree, q, near_idx, cworld, model, cfg);
}

/// Grows one tree from `start`. With `stop_at_goal` the loop ends at the first goal
/// connection; otherwise all samples are spent (and the goal node keeps being rewired).
inline Tree grow_tree(const World & cworld, const RobotModel & model, const VectorXd & start, const VectorXd & goal,
                      const SamplingBox & box, const RRTConfig & cfg, std::uint64_t tree_seed, bool stop_at_goal)
{
  std::mt19937_64 rng(splitmix64(tree_seed));
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  Tree tree(start);
  VectorXd sample(start.size());

  for (int s = 0; s < cfg.n_samples; ++s) {
    if (unit(rng) < cfg.goal_bias) {
      sample = goal;
    } else {
      for (Eigen::Index d = 0; d < sample.size(); ++d) sample(d) = box.lo(d) + unit(rng) * (box.hi(d) - box.lo(d));
    }
    const auto id = extend(tree, sample, cworld, model, cfg);
    if (!id || tree.goal_index()) continue;

    const VectorXd & q = tree.node(*id).config;
    if (q == goal) {
      tree.set_goal_index(*id);
    } else if ((q - goal).norm() <= cfg.steer_step && edge_free(cworld, model, q, goal, cfg.edge_check_resolution)) {
      tree.set_goal_index(insert_node(tree, goal, *id, cworld, model, cfg));
    }
    if (tree.goal_index() && stop_at_goal) break;
  }
  return tree;
}

inline void check_endpoints(const World & cworld, const RobotModel & model, const VectorXd & start,
                            const VectorXd & goal)
{
  if (start.size() != model.config_dim() || goal.size() != model.config_dim()) {
    throw ArgumentError("rrt: start/goal dimension does not match the robot configuration");
  }
  if (start == goal) throw ArgumentError("rrt: start and goal coincide");
  if (!model.is_arm()) {
    if (!cworld.bounds().contains(start)) throw InfeasibleEndpointError("rrt: start lies outside the world bounds");
    if (!cworld.bounds().contains(goal)) throw InfeasibleEndpointError("rrt: goal lies outside the world bounds");
  }
  if (!configuration_free(cworld, model, start)) throw InfeasibleEndpointError("rrt: start is in collision");
  if (!configuration_free(cworld, model, goal)) throw InfeasibleEndpointError("rrt: goal is in collision");
}

}  // namespace detail

/// True iff every configuration sampled along a->b (spacing <= resolution, both ends
/// included) keeps all collision points at non-negative signed distance.
inline bool edge_collision_free(const World & world, const RobotModel & model, const VectorXd & a,
                                const VectorXd & b, double resolution)
{
  if (!(resolution > 0.0)) throw ArgumentError("edge_collision_free: resolution must be positive");
  return detail::edge_free(collision_world(world, model), model, a, b, resolution);
}

/// One extend + rewire step. Returns the new node index, or nothing when blocked.
inline std::optional<std::size_t> extend(Tree & tree, const VectorXd & sample, const World & world,
                                         const RobotModel & model, const RRTConfig & cfg)
{
  return detail::extend(tree, sample, collision_world(world, model), model, cfg);
}

/// Grows the tree with global index `tree_index` exactly as plan() would.
inline Tree grow_tree(const World & world, const RobotModel & model, const VectorXd & start, const VectorXd & goal,
                      const RRTConfig & cfg, std::uint64_t tree_index, bool stop_at_goal = false)
{
  cfg.validate();
  const World cworld = collision_world(world, model);
  detail::check_endpoints(cworld, model, start, goal);
  return detail::grow_tree(cworld, model, start, goal, detail::sampling_box(world, model, start, goal), cfg,
                           cfg.seed + tree_index, stop_at_goal);
}

inline Path plan(const World & world, const RobotModel & model, const VectorXd & start, const VectorXd & goal,
                 const RRTConfig & cfg)
{
  cfg.validate();
  const World cworld = collision_world(world, model);
  detail::check_endpoints(cworld, model, start, goal);
  const auto box = detail::sampling_box(world, model, start, goal);

  const auto n = static_cast<std::size_t>(cfg.n_trees);
  for (int batch = 0; batch < cfg.max_batches; ++batch) {
    const std::uint64_t offset = static_cast<std::uint64_t>(batch) * n;
    std::vector<std::optional<Path>> found(n);
    parallel_for(n, static_cast<std::size_t>(cfg.threads), [&](std::size_t i) {
      const Tree tree = detail::grow_tree(cworld, model, start, goal, box, cfg, cfg.seed + offset + i, false);
      if (tree.goal_index()) found[i] = make_path(tree.path_to(*tree.goal_index()));
    });

    std::optional<Path> best;
    for (auto & p : found) {
      if (p && (!best || p->length < best->length)) best = std::move(p);
    }
    if (best) return *best;
  }
  throw PlanningFailure("rrt: no tree reached the goal in " + std::to_string(cfg.max_batches) + " batches of " +
                        std::to_string(cfg.n_trees) + " trees");
}

}  // namespace rrtsopt
