#include <rrtsopt/sopt.hpp>

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>
#include <set>

#include "oracles.hpp"

using namespace rrtsopt;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

VectorXd v2(double x, double y) { return Eigen::Vector2d(x, y); }

World empty_world() { return World(Bounds{Vec2(-1, -6), Vec2(11, 6)}, {}); }

World circles(std::mt19937_64 & rng, int count, Vec2 start, Vec2 goal)
{
  std::vector<Obstacle> obs;
  while (static_cast<int>(obs.size()) < count) {
    const Vec2 c(oracle::uniform(rng, 1.5, 10.5), oracle::uniform(rng, 1.5, 10.5));
    const double r = oracle::uniform(rng, 0.4, 1.0);
    if ((c - start).norm() < r + 0.6 || (c - goal).norm() < r + 0.6) continue;
    obs.emplace_back(static_cast<int>(obs.size()), Circle{c, r}, 0.1);
  }
  return World(Bounds{Vec2(0, 0), Vec2(12, 12)}, std::move(obs));
}

RRTConfig quick_rrt(std::uint64_t seed)
{
  RRTConfig c;
  c.n_trees   = 2;
  c.n_samples = 1500;
  c.seed      = seed;
  c.threads   = 1;
  return c;
}

SoptConfig with_segments(int n)
{
  SoptConfig c;
  c.n_segments = n;
  c.threads    = 1;
  return c;
}

struct Scene
{
  World world;
  Path path;
};

Scene random_scene(std::uint64_t seed, int obstacles)
{
  std::mt19937_64 rng(seed);
  const Vec2 start(0.5, 0.5), goal(11.5, 11.5);
  World w = circles(rng, obstacles, start, goal);
  Path p  = rrtsopt::plan(w, RobotModel::point_mass(0.1), start, goal, quick_rrt(seed));
  return {std::move(w), std::move(p)};
}

/// Lower block-triangular dt blocks: z_t = z_0 + dt * sum_{s<t} u_s for the point mass.
MatrixXd point_mass_map(Eigen::Index steps, double dt)
{
  MatrixXd j = MatrixXd::Zero(2 * steps, 2 * steps);
  for (Eigen::Index t = 0; t < steps; ++t) {
    for (Eigen::Index s = 0; s <= t; ++s) j.block(2 * t, 2 * s, 2, 2) = dt * MatrixXd::Identity(2, 2);
  }
  return j;
}

}  // namespace

// ---------------------------------------------------------------------------------------

TEST(HorizonFor, RoundsUpToDivisibleHorizon)
{
  EXPECT_EQ(horizon_for(10.0, 1.0, 0.1, 5), 101);
  EXPECT_EQ(horizon_for(10.0, 1.0, 0.1, 1), 101);
  EXPECT_EQ(horizon_for(10.05, 1.0, 0.1, 5), 101);
  EXPECT_EQ(horizon_for(10.15, 1.0, 0.1, 5), 111);
  EXPECT_EQ(horizon_for(0.01, 1.0, 0.1, 3), 7);
  for (int n = 1; n <= 9; ++n) {
    for (double len : {0.3, 4.2, 17.9}) {
      const auto h = horizon_for(len, 0.8, 0.1, n);
      EXPECT_EQ((h - 1) % (2 * n), 0);
      EXPECT_GE(static_cast<double>(h), len / 0.08 - 1e-9);
      EXPECT_LT(static_cast<double>(h - 2 * n), std::max(len / 0.08, 2.0 * n + 1.0));
    }
  }
}

TEST(GenerateReference, StraightPathHorizon)
{
  const auto m   = RobotModel::point_mass(0.1);
  const auto ref = generate_reference(make_path({v2(0, 0), v2(10, 0)}), m, with_segments(5));
  EXPECT_EQ(ref.waypoints(), 101);
  EXPECT_EQ(ref.state(0), v2(0, 0));
  EXPECT_TRUE(ref.state(100).isApprox(v2(10, 0)));
}

TEST(GenerateReference, DegeneratePath)
{
  const auto m = RobotModel::point_mass(0.1);
  EXPECT_THROW(generate_reference(make_path({v2(1, 1), v2(1, 1)}), m, with_segments(5)), DegeneratePathError);
  EXPECT_THROW(generate_reference(make_path({v2(1, 1)}), m, with_segments(5)), DegeneratePathError);
}

TEST(GenerateReference, LShapedPathHasUniformArcLengthSpacing)
{
  const auto m    = RobotModel::point_mass(0.1);
  const auto path = make_path({v2(0, 0), v2(3, 0), v2(3, 4.5)});
  const auto ref  = generate_reference(path, m, with_segments(3));
  const auto h    = ref.waypoints();
  EXPECT_EQ((h - 1) % 6, 0);

  // Spacing is recomputed from the states, measured along the polyline.
  auto arc = [](const VectorXd & z) { return z(1) > 1e-12 ? 3.0 + z(1) : z(0); };
  const double spacing = 7.5 / static_cast<double>(h - 1);
  for (Eigen::Index t = 1; t < h; ++t) {
    EXPECT_NEAR(arc(ref.state(t)) - arc(ref.state(t - 1)), spacing, 1e-9);
    const VectorXd z = ref.state(t);
    EXPECT_TRUE(std::abs(z(1)) < 1e-12 || std::abs(z(0) - 3.0) < 1e-12);
  }
}

TEST(GenerateReference, ArmStartsAndEndsAtRest)
{
  ArmGeometry g;
  g.link_lengths = {1.0, 0.8};
  const auto m   = RobotModel::planar_arm(g, 0.1);
  const auto ref = generate_reference(make_path({v2(0, 0), v2(1, 0.5), v2(2, -0.5)}), m, with_segments(2));
  const auto h   = ref.waypoints();
  EXPECT_EQ((h - 1) % 4, 0);
  EXPECT_TRUE(ref.state(0).isApprox(rest_state(m, v2(0, 0))));
  EXPECT_LT((ref.state(h - 1) - rest_state(m, v2(2, -0.5))).norm(), 1e-9);
  EXPECT_EQ(ref.states(), rollout(m, ref.state(0), ref.inputs()));
}

TEST(ResampleTraj, IdempotentOnUniformStraightLine)
{
  const auto m   = RobotModel::point_mass(0.1);
  const auto cfg = with_segments(5);
  const auto ref = generate_reference(make_path({v2(0, 0), v2(10, 0)}), m, cfg);
  const auto r   = resample_traj(ref, m, cfg, 5);
  EXPECT_FALSE(r.resampled);
  EXPECT_FALSE(r.degenerate);
  EXPECT_EQ(r.trajectory.waypoints(), ref.waypoints());
}

TEST(ResampleTraj, ShortenedTrajectoryShrinksHorizon)
{
  const auto m   = RobotModel::point_mass(0.1);
  const auto cfg = with_segments(5);
  // 101 waypoints covering 8 units: a 20% shorter path than the horizon was sized for.
  VectorXd u = VectorXd::Zero(200);
  for (int t = 0; t < 100; ++t) u(2 * t) = 0.8;
  const Trajectory traj(m, v2(0, 0), u);
  const auto r = resample_traj(traj, m, cfg, 5);
  EXPECT_TRUE(r.resampled);
  EXPECT_EQ(r.trajectory.waypoints(), 81);
  EXPECT_NEAR(static_cast<double>(r.trajectory.waypoints()), 0.8 * 101, 10.0);
  EXPECT_TRUE(r.trajectory.state(80).isApprox(v2(8, 0)));
}

TEST(ResampleTraj, RolloutReproducesResampledStates)
{
  const auto m = RobotModel::point_mass(0.1);
  std::mt19937_64 rng(11);
  const Trajectory traj(m, v2(0, 0), oracle::random_vector(rng, 2 * 60, -2, 2));
  const auto r = resample_traj(traj, m, with_segments(3), 3);
  ASSERT_TRUE(r.resampled);
  EXPECT_EQ(r.trajectory.states(), rollout(m, r.trajectory.state(0), r.trajectory.inputs()));
  EXPECT_EQ(r.trajectory.state(0), traj.state(0));
  EXPECT_LT((r.trajectory.state(r.trajectory.waypoints() - 1) - traj.state(traj.waypoints() - 1)).norm(), 1e-9);
}

TEST(ResampleTraj, DegenerateTrajectoryIsFlagged)
{
  const auto m = RobotModel::point_mass(0.1);
  const Trajectory still(m, v2(2, 2), VectorXd::Zero(20));
  const auto r = resample_traj(still, m, with_segments(1), 1);
  EXPECT_TRUE(r.degenerate);
  EXPECT_FALSE(r.resampled);
  EXPECT_EQ(r.trajectory.inputs(), still.inputs());
}

// ---------------------------------------------------------------------------------------

TEST(SplitReference, Examples)
{
  const auto m = RobotModel::point_mass(0.1);
  const Trajectory h101(m, v2(0, 0), VectorXd::Zero(200));
  const auto s5 = split_reference(h101, 5);
  ASSERT_EQ(s5.W.size(), 11u);
  for (std::size_t i = 0; i < 11; ++i) EXPECT_EQ(s5.W[i], static_cast<Eigen::Index>(10 * i));
  EXPECT_EQ(s5.segment_count(), 5);

  EXPECT_EQ(split_reference(h101, 1).W, (std::vector<Eigen::Index>{0, 50, 100}));
  EXPECT_THROW(split_reference(h101, 3), InternalError);
  EXPECT_THROW(split_reference(h101, 0), ArgumentError);
}

TEST(SplitReference, OddAndEvenSegmentsFollowTheSchedule)
{
  SplitSchedule s;
  s.W = {0, 10, 20, 30, 40, 50, 60};
  const auto odd = s.segments(SplitMode::odd);
  ASSERT_EQ(odd.size(), 3u);
  EXPECT_EQ(odd[0].first, 0);
  EXPECT_EQ(odd[0].last, 20);
  EXPECT_EQ(odd[2].first, 40);
  EXPECT_EQ(odd[2].last, 60);
  const auto even = s.segments(SplitMode::even);
  ASSERT_EQ(even.size(), 2u);
  EXPECT_EQ(even[0].first, 10);
  EXPECT_EQ(even[0].last, 30);
  EXPECT_EQ(even[1].first, 30);
  EXPECT_EQ(even[1].last, 50);
}

TEST(SplitReference, RescaleAfterMergeKeepsStructure)
{
  const auto m = RobotModel::point_mass(0.1);
  SplitSchedule merged;
  merged.W = {0, 10, 20, 50, 60, 70, 80, 90, 100};
  const auto s = split_reference(Trajectory(m, v2(0, 0), VectorXd::Zero(160)), merged);
  EXPECT_EQ(s.W.size(), merged.W.size());
  EXPECT_EQ(s.W.front(), 0);
  EXPECT_EQ(s.W.back(), 80);
  EXPECT_TRUE(std::is_sorted(s.W.begin(), s.W.end(), std::less_equal<>()) && std::adjacent_find(s.W.begin(), s.W.end()) == s.W.end());
  EXPECT_EQ(s.W[3], 40);
}

TEST(SplitReference, RandomMergePatternsStayStrictlyIncreasing)
{
  const auto m = RobotModel::point_mass(0.1);
  std::mt19937_64 rng(12);
  for (int trial = 0; trial < 300; ++trial) {
    const int n     = std::uniform_int_distribution<int>(1, 9)(rng);
    const int g     = std::uniform_int_distribution<int>(1, 12)(rng);
    const auto h    = static_cast<Eigen::Index>(2 * n * g + 1);
    SplitSchedule s = split_reference(Trajectory(m, v2(0, 0), VectorXd::Zero(2 * (h - 1))), n);
    while (s.segment_count() > 1 && std::uniform_int_distribution<int>(0, 2)(rng) > 0) {
      std::vector<double> progress(s.active_segments().size() - 1);
      for (auto & p : progress) p = oracle::uniform(rng, 0, 2);
      s = merge_step(s, progress, 1.0);
      s.mode = s.mode == SplitMode::odd ? SplitMode::even : SplitMode::odd;
      if (s.active_segments().size() < 2) s.mode = SplitMode::odd;
    }
    const auto count  = s.W.size();
    const auto new_h  = std::uniform_int_distribution<Eigen::Index>(static_cast<Eigen::Index>(count), 3 * h)(rng);
    const auto scaled = split_reference(Trajectory(m, v2(0, 0), VectorXd::Zero(2 * (new_h - 1))), s);
    ASSERT_EQ(scaled.W.size(), count);
    EXPECT_EQ(scaled.W.front(), 0);
    EXPECT_EQ(scaled.W.back(), new_h - 1);
    for (std::size_t i = 1; i < count; ++i) EXPECT_LT(scaled.W[i - 1], scaled.W[i]);
  }
}

TEST(SplitSchedule, EveryInteriorSplitPointIsOptimizedOnceOverTwoIterations)
{
  std::mt19937_64 rng(13);
  for (int trial = 0; trial < 200; ++trial) {
    const int points = 2 * std::uniform_int_distribution<int>(1, 10)(rng) + 1;
    SplitSchedule s;
    std::set<Eigen::Index> w{0};
    while (static_cast<int>(w.size()) < points) w.insert(std::uniform_int_distribution<Eigen::Index>(1, 400)(rng));
    s.W.assign(w.begin(), w.end());

    std::vector<int> hits(s.W.size(), 0);
    for (auto mode : {SplitMode::odd, SplitMode::even}) {
      for (const auto & seg : s.segments(mode)) {
        for (std::size_t i = 0; i < s.W.size(); ++i) {
          if (s.W[i] > seg.first && s.W[i] < seg.last) ++hits[i];
        }
      }
    }
    EXPECT_EQ(hits.front(), 0);
    EXPECT_EQ(hits.back(), 0);
    for (std::size_t i = 1; i + 1 < hits.size(); ++i) EXPECT_EQ(hits[i], 1) << "split point " << i;
  }
}

// ---------------------------------------------------------------------------------------

TEST(IterProg, Examples)
{
  EXPECT_EQ(iter_prog(3.5, 3.5), 0.0);
  EXPECT_NEAR(iter_prog(10.0, 9.2), 0.8, 1e-12);
  EXPECT_NEAR(iter_prog(9.2, 10.0), 0.8, 1e-12);
  EXPECT_NEAR(merge_threshold(1e-3, 101, 5), 4.0804, 1e-12);
}

TEST(MergeStep, AllAboveThresholdLeavesScheduleUnchanged)
{
  SplitSchedule s;
  s.W = {0, 10, 20, 30, 40, 50, 60, 70, 80, 90, 100};
  const auto out = merge_step(s, {5, 6, 7, 8}, 4.0);
  EXPECT_EQ(out.W, s.W);
}

TEST(MergeStep, TwoSegmentsBecomeOne)
{
  SplitSchedule s;
  s.W = {0, 25, 50, 75, 100};
  const auto out = merge_step(s, {0.1}, 1.0);
  EXPECT_EQ(out.segment_count(), 1);
  EXPECT_EQ(out.W, (std::vector<Eigen::Index>{0, 50, 100}));
}

TEST(MergeStep, LeftToRightSkipRule)
{
  SplitSchedule s;
  s.W = {0, 10, 20, 30, 40, 50, 60, 70, 80, 90, 100};
  const auto out = merge_step(s, {0.1, 0.1, 9.0, 9.0}, 1.0);
  EXPECT_EQ(out.segment_count(), 4);
  EXPECT_EQ(out.W, (std::vector<Eigen::Index>{0, 20, 40, 50, 60, 70, 80, 90, 100}));

  // Three consecutive small pairs: (1,2) merges, (2,3) is skipped, (3,4) merges.
  const auto two = merge_step(s, {0.1, 0.1, 0.1, 9.0}, 1.0);
  EXPECT_EQ(two.segment_count(), 3);
  EXPECT_EQ(two.W, (std::vector<Eigen::Index>{0, 20, 40, 60, 80, 90, 100}));
}

TEST(MergeStep, EvenModeMergesInteriorSegments)
{
  SplitSchedule s;
  s.W    = {0, 10, 20, 30, 40, 50, 60};
  s.mode = SplitMode::even;
  const auto out = merge_step(s, {0.0}, 1.0);
  EXPECT_EQ(out.W, (std::vector<Eigen::Index>{0, 10, 30, 50, 60}));
}

TEST(MergeStep, ProgressSizeMismatchIsRejected)
{
  SplitSchedule s;
  s.W = {0, 10, 20, 30, 40};
  EXPECT_THROW(merge_step(s, {}, 1.0), ArgumentError);
  EXPECT_THROW(merge_step(s, {1.0, 1.0}, 1.0), ArgumentError);
}

// ---------------------------------------------------------------------------------------

TEST(TrajectoryCost, MatchesDirectSumAndSplitsAdditively)
{
  const auto m = RobotModel::point_mass(0.1);
  std::mt19937_64 rng(14);
  const Trajectory traj(m, v2(0, 0), oracle::random_vector(rng, 2 * 30));
  const VectorXd goal = v2(3, -1);
  SoptConfig cfg;
  cfg.Q_weight = 0.7;
  cfg.R_weight = 0.2;

  double direct = 0.0;
  VectorXd z    = v2(0, 0);
  for (int t = 0; t < 30; ++t) {
    const VectorXd u = traj.inputs().segment(2 * t, 2);
    z += 0.1 * u;
    direct += 0.7 * (z - goal).squaredNorm() + 0.2 * u.squaredNorm();
  }
  EXPECT_NEAR(trajectory_cost(traj, goal, cfg), direct, 1e-10);
  EXPECT_NEAR(trajectory_cost(traj, goal, cfg, 0, 12) + trajectory_cost(traj, goal, cfg, 12, 30), direct, 1e-10);
}

// ---------------------------------------------------------------------------------------

TEST(ObsSelect, Examples)
{
  const auto m = RobotModel::point_mass(0.1);
  SoptConfig cfg;
  cfg.obstacle_margin = 0.5;
  const std::vector<VectorXd> seg{v2(0, 0), v2(1, 0)};
  EXPECT_TRUE(obs_select(World(Bounds{Vec2(-10, -10), Vec2(10, 10)}, {}), seg, m, cfg).empty());

  const World far(Bounds{Vec2(-10, -10), Vec2(10, 10)}, {Obstacle(0, Circle{Vec2(0, 5.5), 0.5})});
  EXPECT_TRUE(obs_select(far, seg, m, cfg).empty());
  EXPECT_THROW(obs_select(far, {}, m, cfg), ArgumentError);
}

TEST(ObsSelect, MatchesExhaustiveScan)
{
  std::mt19937_64 rng(15);
  ArmGeometry g;
  g.link_lengths = {0.6, 0.5};
  for (const auto & m : {RobotModel::point_mass(0.1), RobotModel::planar_arm(g, 0.1)}) {
    for (int trial = 0; trial < 50; ++trial) {
      std::vector<Obstacle> obs;
      for (int i = 0; i < 12; ++i) {
        obs.emplace_back(i, Circle{Vec2(oracle::uniform(rng, -4, 4), oracle::uniform(rng, -4, 4)), oracle::uniform(rng, 0.1, 0.6)},
                         oracle::uniform(rng, 0, 0.2));
      }
      const World w(Bounds{Vec2(-5, -5), Vec2(5, 5)}, obs);
      std::vector<VectorXd> seg;
      for (int t = 0; t < 6; ++t) seg.push_back(oracle::random_vector(rng, m.state_dim(), -3, 3));
      SoptConfig cfg;
      cfg.obstacle_margin = oracle::uniform(rng, 0.1, 2.0);

      std::vector<int> expected;
      for (const auto & o : w.obstacles()) {
        double d = std::numeric_limits<double>::infinity();
        for (const auto & z : seg) {
          for (const auto & p : collision_points(m, z)) d = std::min(d, o.signed_distance(p) - m.body_margin());
        }
        if (d < cfg.obstacle_margin) expected.push_back(o.id());
      }
      EXPECT_EQ(obs_select(w, seg, m, cfg), expected);
    }
  }
}

// ---------------------------------------------------------------------------------------

TEST(BuildCfs, EmptySelectionGivesNoRows)
{
  const auto m   = RobotModel::point_mass(0.1);
  const auto cfs = build_cfs(empty_world(), m, v2(0, 0), VectorXd::Zero(8), {});
  EXPECT_EQ(cfs.rows(), 0);
  EXPECT_EQ(cfs.A.cols(), 8);
  EXPECT_TRUE(cfs.provenance.empty());
}

TEST(BuildCfs, ExactAtTheLinearizationPoint)
{
  const auto m = RobotModel::point_mass(0.1);
  const World w(Bounds{Vec2(-5, -5), Vec2(5, 5)}, {Obstacle(7, Circle{Vec2(2, 0), 0.5})});
  const VectorXd u = v2(3, 1);
  const auto cfs   = build_cfs(w, m, v2(0, 0), u, {7});
  ASSERT_EQ(cfs.rows(), 1);
  const double h = (v2(0.3, 0.1) - v2(2, 0)).norm() - 0.5;
  EXPECT_NEAR(cfs.A.row(0).dot(u) - cfs.b(0), h, 1e-12);
  EXPECT_NEAR(cfs.h_ref(0), h, 1e-12);
  EXPECT_EQ(cfs.provenance[0].obstacle_id, 7);
  EXPECT_EQ(cfs.provenance[0].step, 1);
}

TEST(BuildCfs, ReferenceSatisfiesEveryRowWithItsSafetyValue)
{
  std::mt19937_64 rng(16);
  ArmGeometry g;
  g.link_lengths = {0.7, 0.6, 0.5};
  const auto m   = RobotModel::planar_arm(g, 0.1);
  const World w(Bounds{Vec2(-3, -3), Vec2(3, 3)},
                {Obstacle(0, Circle{Vec2(1.2, 1.0), 0.3}), Obstacle(1, ConvexPolygon{{Vec2(-2, -0.5), Vec2(-1.5, -0.5), Vec2(-1.5, 0.4)}})});
  const VectorXd z0 = oracle::random_vector(rng, 6, -1, 1);
  const VectorXd u  = oracle::random_vector(rng, 3 * 5, -1, 1);
  const auto cfs    = build_cfs(w, m, z0, u, {0, 1});
  ASSERT_EQ(cfs.rows(), 2 * 5 * m.points_per_state());
  const VectorXd states = rollout(m, z0, u);
  for (Eigen::Index r = 0; r < cfs.rows(); ++r) {
    const auto & row = cfs.provenance[static_cast<std::size_t>(r)];
    const VectorXd z = states.segment((row.step - 1) * 6, 6);
    const double h   = w.obstacle(row.obstacle_id).signed_distance(collision_points(m, z)[static_cast<std::size_t>(row.point)]) -
                     m.body_margin();
    EXPECT_NEAR(cfs.A.row(r).dot(u) - cfs.b(r), h, 1e-10);
  }
}

TEST(BuildCfs, SecondOrderRemainder)
{
  std::mt19937_64 rng(17);
  ArmGeometry g;
  g.link_lengths = {0.8, 0.6};
  const World w(Bounds{Vec2(-3, -3), Vec2(3, 3)}, {Obstacle(0, Circle{Vec2(0.9, 1.1), 0.25})});
  for (const auto & m : {RobotModel::point_mass(0.1), RobotModel::planar_arm(g, 0.1)}) {
    for (int trial = 0; trial < 10; ++trial) {
      const Eigen::Index hs = 4;
      const VectorXd z0     = oracle::random_vector(rng, m.state_dim(), -1, 1);
      const VectorXd u      = oracle::random_vector(rng, hs * m.input_dim(), -1, 1);
      const VectorXd dir    = oracle::random_vector(rng, u.size()).normalized();
      const auto cfs        = build_cfs(w, m, z0, u, {0});

      std::vector<double> fitted;
      for (double scale : {1e-2, 1e-3, 1e-4}) {
        const VectorXd du     = scale * dir;
        const VectorXd states = rollout(m, z0, u + du);
        double worst          = 0.0;
        for (Eigen::Index r = 0; r < cfs.rows(); ++r) {
          const auto & row = cfs.provenance[static_cast<std::size_t>(r)];
          const VectorXd z = states.segment((row.step - 1) * m.state_dim(), m.state_dim());
          const double h   = w.obstacle(0).signed_distance(collision_points(m, z)[static_cast<std::size_t>(row.point)]) -
                           m.body_margin();
          worst = std::max(worst, std::abs(h - (cfs.A.row(r).dot(u + du) - cfs.b(r))));
        }
        fitted.push_back(worst / (scale * scale));
      }
      // The remainder constant stays bounded and does not grow as the step shrinks.
      EXPECT_LT(fitted[2], 100.0);
      EXPECT_LT(fitted[2], 2.0 * fitted[0] + 1e-3);
      EXPECT_LT(fitted[1], 2.0 * fitted[0] + 1e-3);
    }
  }
}

// ---------------------------------------------------------------------------------------

TEST(SolveSegment, MatchesClosedFormLinearQuadratic)
{
  const auto m = RobotModel::point_mass(0.1, 100.0);
  std::mt19937_64 rng(18);
  for (int trial = 0; trial < 20; ++trial) {
    const Eigen::Index hs = std::uniform_int_distribution<Eigen::Index>(1, 6)(rng);
    SoptConfig cfg;
    cfg.Q_weight         = oracle::uniform(rng, 0.01, 2.0);
    cfg.R_weight         = oracle::uniform(rng, 0.01, 2.0);
    const VectorXd z0    = oracle::random_vector(rng, 2, -2, 2);
    const VectorXd tgt   = oracle::random_vector(rng, 2, -2, 2);
    const VectorXd goal  = oracle::random_vector(rng, 2, -2, 2);
    const auto cfs       = build_cfs(empty_world(), m, z0, VectorXd::Zero(2 * hs), {});
    const auto sol       = solve_segment(m, z0, VectorXd::Zero(2 * hs), cfs, tgt, goal, cfg);
    ASSERT_EQ(sol.status, qp::QpStatus::optimal);

    // min Q |z0 + J u - goal|^2 + R |u|^2  s.t.  last block of (z0 + J u) = tgt, via KKT.
    const MatrixXd j = point_mass_map(hs, 0.1);
    VectorXd c(2 * hs);
    for (Eigen::Index t = 0; t < hs; ++t) c.segment(2 * t, 2) = z0 - goal;
    const Eigen::Index n = 2 * hs;
    MatrixXd kkt          = MatrixXd::Zero(n + 2, n + 2);
    kkt.topLeftCorner(n, n) = 2.0 * cfg.Q_weight * j.transpose() * j + 2.0 * cfg.R_weight * MatrixXd::Identity(n, n);
    kkt.bottomLeftCorner(2, n) = j.bottomRows(2);
    kkt.topRightCorner(n, 2)   = j.bottomRows(2).transpose();
    VectorXd rhs(n + 2);
    rhs.head(n) = -2.0 * cfg.Q_weight * j.transpose() * c;
    rhs.tail(2) = tgt - z0;
    const VectorXd expected = kkt.fullPivLu().solve(rhs).head(n);
    EXPECT_LT((sol.u - expected).cwiseAbs().maxCoeff(), 1e-7) << "trial " << trial;
    EXPECT_LT((rollout(m, z0, sol.u).tail(2) - tgt).norm(), 1e-8);
  }
}

TEST(SolveSegment, StationaryAtTheFixedPoint)
{
  const auto m = RobotModel::point_mass(0.1);
  const VectorXd z0 = v2(1, 2);
  const auto cfs    = build_cfs(empty_world(), m, z0, VectorXd::Zero(10), {});
  const auto sol    = solve_segment(m, z0, VectorXd::Zero(10), cfs, z0, z0, SoptConfig{});
  ASSERT_EQ(sol.status, qp::QpStatus::optimal);
  EXPECT_LT(sol.u.cwiseAbs().maxCoeff(), 1e-10);
  EXPECT_NEAR(sol.cost, 0.0, 1e-12);
}

TEST(SolveSegment, ActiveHalfPlaneHoldsWithEquality)
{
  // Two steps from the origin to (0.2, 0): the unconstrained optimum moves straight along x.
  // The row requires the first state's y to be at least 0.05, which the optimum violates.
  const auto m = RobotModel::point_mass(0.1);
  SoptConfig cfg;
  cfg.Q_weight = 0.5;
  cfg.R_weight = 1.0;
  ConvexFeasibleSet cfs;
  cfs.A = MatrixXd::Zero(1, 4);
  cfs.A(0, 1) = 0.1;
  cfs.b       = VectorXd::Constant(1, 0.05);
  cfs.h_ref   = VectorXd::Constant(1, 1.0);
  cfs.provenance.push_back(CfsRow{0, 1, 0});

  const VectorXd z0 = v2(0, 0), tgt = v2(0.2, 0);
  const auto free   = solve_segment(m, z0, VectorXd::Zero(4), build_cfs(empty_world(), m, z0, VectorXd::Zero(4), {}), tgt, tgt, cfg);
  ASSERT_LT(0.1 * free.u(1), 0.05);

  const auto sol = solve_segment(m, z0, VectorXd::Zero(4), cfs, tgt, tgt, cfg);
  ASSERT_EQ(sol.status, qp::QpStatus::optimal);
  EXPECT_NEAR(0.1 * sol.u(1), 0.05, 1e-9);

  // By hand: y-inputs (a, b) with a = 0.5 and b = -a to return to y = 0; x-inputs unchanged.
  EXPECT_NEAR(sol.u(1), 0.5, 1e-9);
  EXPECT_NEAR(sol.u(3), -0.5, 1e-9);
  EXPECT_NEAR(sol.u(0), free.u(0), 1e-9);
  EXPECT_NEAR(sol.u(2), free.u(2), 1e-9);
}

TEST(SolveSegment, ViolatedRowsGetSlack)
{
  const auto m = RobotModel::point_mass(0.1);
  const World w(Bounds{Vec2(-5, -5), Vec2(5, 5)}, {Obstacle(0, Circle{Vec2(0.2, 0), 0.3})});
  const VectorXd u_ref = VectorXd::Constant(4, 1.0);
  const auto cfs       = build_cfs(w, m, v2(0, 0), u_ref, {0});
  ASSERT_LT(cfs.h_ref.minCoeff(), kSlackThreshold);
  const auto sol = solve_segment(m, v2(0, 0), u_ref, cfs, v2(0.2, 0.2), v2(0.2, 0.2), SoptConfig{});
  EXPECT_EQ(sol.status, qp::QpStatus::optimal);
  EXPECT_EQ(sol.slack_rows, 2);
}

TEST(SolveSegment, DimensionMismatchIsInternalError)
{
  const auto m = RobotModel::point_mass(0.1);
  ConvexFeasibleSet cfs;
  cfs.A = MatrixXd::Zero(1, 3);
  cfs.b = VectorXd::Zero(1);
  cfs.h_ref = VectorXd::Ones(1);
  EXPECT_THROW(solve_segment(m, v2(0, 0), VectorXd::Zero(4), cfs, v2(0, 0), v2(0, 0), SoptConfig{}), InternalError);
}

// ---------------------------------------------------------------------------------------

TEST(Plan, EmptyWorldStraightPath)
{
  const auto m = RobotModel::point_mass(0.1);
  const auto r = plan(empty_world(), m, make_path({v2(0, 0), v2(10, 0)}), with_segments(5));
  EXPECT_TRUE(r.converged);
  EXPECT_LE(r.iterations, 3);
  EXPECT_LE(r.cost_history.back(), r.reference_cost);
  EXPECT_EQ(trajectory_clearance(empty_world(), m, r.trajectory), std::numeric_limits<double>::infinity());
  EXPECT_LT((r.trajectory.state(r.trajectory.waypoints() - 1) - v2(10, 0)).norm(), 1e-8);
}

TEST(Plan, EmptyWorldCostIsIndependentOfSegmentCount)
{
  const auto m = RobotModel::point_mass(0.1);
  SoptConfig one = with_segments(1), five = with_segments(5);
  one.resample = five.resample = false;
  // Run the block-coordinate iterations to (near) their fixed point.
  one.eps_scale = five.eps_scale = 1e-12;
  one.max_iterations = five.max_iterations = 400;
  const auto path = make_path({v2(0, 0), v2(3, 0)});
  // Same horizon for both: (H-1) divisible by 2 and by 10.
  const auto a = plan(empty_world(), m, path, one);
  const auto b = plan(empty_world(), m, path, five);
  ASSERT_EQ(a.trajectory.waypoints(), b.trajectory.waypoints());
  EXPECT_NEAR(a.cost_history.back(), b.cost_history.back(), 1e-4);
  EXPECT_TRUE(a.converged);
  EXPECT_TRUE(b.converged) << b.iterations;
}

TEST(Plan, SingleCircleDetour)
{
  const auto m = RobotModel::point_mass(0.1);
  const World w(Bounds{Vec2(-1, -6), Vec2(11, 6)}, {Obstacle(0, Circle{Vec2(5, 0), 1.5}, 0.1)});
  const Path p = rrtsopt::plan(w, m, Vec2(0, 0), Vec2(10, 0), quick_rrt(3));
  EXPECT_GT(p.length, 10.0);
  const auto r = plan(w, m, p, with_segments(5));
  EXPECT_GE(trajectory_clearance(w, m, r.trajectory), 0.0);
  EXPECT_LT(r.cost_history.back(), r.reference_cost);
}

TEST(Plan, IterationLimit)
{
  const auto m    = RobotModel::point_mass(0.1);
  const auto path = make_path({v2(0, 0), v2(4, 3)});
  SoptConfig cfg  = with_segments(2);
  cfg.max_iterations = 0;
  EXPECT_THROW(plan(empty_world(), m, path, cfg), ArgumentError);

  cfg.max_iterations = 1;
  const auto r       = plan(empty_world(), m, path, cfg);
  EXPECT_EQ(r.iterations, 1);
  ASSERT_EQ(r.cost_history.size(), 1u);
  const double eps = cfg.eps_scale * static_cast<double>(r.trajectory.waypoints());
  EXPECT_EQ(r.converged, std::abs(r.cost_history[0] - r.reference_cost) <= eps);
}

TEST(Plan, ArmReachesGoalAtRest)
{
  ArmGeometry g;
  g.link_lengths = {0.6, 0.5, 0.4};
  const auto m   = RobotModel::planar_arm(g, 0.1);
  const World w(Bounds{Vec2(-2, -2), Vec2(2, 2)}, {Obstacle(0, Circle{Vec2(0.9, 0.9), 0.2})});
  const VectorXd start = Eigen::Vector3d(-0.5, 0.3, 0.2), goal = Eigen::Vector3d(1.8, -0.2, -0.4);
  const Path p = rrtsopt::plan(w, m, start, goal, quick_rrt(4));
  SoptConfig cfg = with_segments(3);
  cfg.desired_speed = 0.5;
  const auto r      = plan(w, m, p, cfg);
  EXPECT_GE(trajectory_clearance(w, m, r.trajectory), -1e-6);
  EXPECT_LT((r.trajectory.state(r.trajectory.waypoints() - 1) - rest_state(m, goal)).norm(), 1e-8);
  EXPECT_LT((r.trajectory.state(0) - rest_state(m, start)).norm(), 1e-12);
  EXPECT_LT(r.cost_history.back(), r.reference_cost);
}

TEST(Plan, EndpointsInCollisionAreRejected)
{
  const auto m = RobotModel::point_mass(0.1);
  const World w(Bounds{Vec2(-1, -6), Vec2(11, 6)}, {Obstacle(0, Circle{Vec2(10, 0), 0.5})});
  EXPECT_THROW(plan(w, m, make_path({v2(0, 0), v2(10, 0)}), with_segments(1)), PlanningFailure);
}

// ---------------------------------------------------------------------------------------
// Properties over random cluttered scenes.

class RandomScenes : public ::testing::TestWithParam<int>
{
};

TEST_P(RandomScenes, DescentAtFixedHorizon)
{
  const auto scene = random_scene(100 + GetParam(), 12);
  const auto m     = RobotModel::point_mass(0.1);
  for (int n : {1, 3, 5}) {
    SoptConfig cfg = with_segments(n);
    cfg.resample   = false;
    const auto r   = plan(scene.world, m, scene.path, cfg);
    double prev    = r.reference_cost;
    for (double c : r.cost_history) {
      EXPECT_LE(c, prev + 1e-6) << "N=" << n;
      prev = c;
    }
    for (auto h : r.horizon_history) EXPECT_EQ(h, r.reference.waypoints());
  }
}

TEST_P(RandomScenes, ReturnedTrajectoryIsSafeExactAndPinned)
{
  const auto scene = random_scene(200 + GetParam(), 15);
  const auto m     = RobotModel::point_mass(0.1);
  for (bool merge : {false, true}) {
    SoptConfig cfg = with_segments(7);
    cfg.auto_merge = merge;
    const auto r   = plan(scene.world, m, scene.path, cfg);
    EXPECT_GE(trajectory_clearance(scene.world, m, r.trajectory), -1e-6);
    EXPECT_EQ(r.trajectory.states(), rollout(m, r.trajectory.state(0), r.trajectory.inputs()));
    EXPECT_EQ(r.trajectory.state(0), scene.path.waypoints.front());
    EXPECT_LT((r.trajectory.state(r.trajectory.waypoints() - 1) - scene.path.waypoints.back()).norm(), 1e-8);
    EXPECT_EQ(static_cast<int>(r.cost_history.size()), r.iterations);
    EXPECT_EQ(r.segment_count_history.size(), r.cost_history.size());
    EXPECT_EQ(r.schedule.W.back(), r.trajectory.waypoints() - 1);

    const auto & counts = r.segment_count_history;
    for (std::size_t i = 1; i < counts.size(); ++i) EXPECT_LE(counts[i], counts[i - 1]);
    EXPECT_GE(counts.back(), 1);
    if (!merge) EXPECT_EQ(counts.back(), 7);
  }
}

TEST_P(RandomScenes, SerialAndParallelAgree)
{
  const auto scene = random_scene(300 + GetParam(), 12);
  const auto m     = RobotModel::point_mass(0.1);
  SoptConfig serial = with_segments(5);
  serial.auto_merge = true;
  SoptConfig parallel = serial;
  parallel.threads    = 4;
  const auto a        = plan(scene.world, m, scene.path, serial);
  const auto b        = plan(scene.world, m, scene.path, parallel);
  EXPECT_EQ(a.cost_history, b.cost_history);
  EXPECT_EQ(a.segment_count_history, b.segment_count_history);
  EXPECT_EQ(a.trajectory.inputs(), b.trajectory.inputs());
}

INSTANTIATE_TEST_SUITE_P(Seeds, RandomScenes, ::testing::Range(0, 6));
