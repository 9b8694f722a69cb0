#include <rrtsopt/scenario.hpp>

#include <gtest/gtest.h>

#include <string>

using namespace rrtsopt;

namespace {

const char * kPointMass = R"({
  "world": {
    "bounds": [0, 0, 10, 10],
    "obstacles": [
      {"id": 1, "shape": "circle", "center": [5, 5], "radius": 1.0, "inflation": 0.1},
      {"id": 2, "shape": "polygon", "vertices": [[7, 1], [9, 1], [8, 3]]}
    ]
  },
  "robot": {"kind": "point_mass_2d", "dt": 0.1, "input_bounds": [[-2, 2], [-3, 3]]},
  "start": [1, 1],
  "goal": [9, 9],
  "planner": {
    "rrt": {"n_samples": 500, "seed": 7},
    "sopt": {"n_segments": 3, "auto_merge": true}
  }
})";

const char * kArm = R"({
  "world": {
    "bounds": [-3, -3, 3, 3],
    "obstacles": [{"id": 0, "shape": "circle", "center": [1.0, 1.0], "radius": 0.3}]
  },
  "robot": {
    "kind": "planar_arm", "dt": 0.1, "n_joints": 3,
    "link_lengths": [0.5, 0.5, 0.5], "base": [0, 0], "spheres_per_link": 2, "sphere_radius": 0.05
  },
  "start": [0, 0, 0],
  "goal": [3.0, 0, 0]
})";

std::size_t error_line(const std::string & text)
{
  try {
    (void)parse_scenario(text, "s.json");
  } catch (const ValidationError & e) {
    EXPECT_EQ(e.file(), "s.json");
    return e.line();
  }
  ADD_FAILURE() << "expected a validation error";
  return 0;
}

std::string replace(std::string text, const std::string & from, const std::string & to)
{
  const auto at = text.find(from);
  EXPECT_NE(at, std::string::npos) << from;
  return text.replace(at, from.size(), to);
}

}  // namespace

TEST(Scenario, ParsesPointMassScenario)
{
  const Scenario s = parse_scenario(kPointMass);
  ASSERT_EQ(s.world.obstacles().size(), 2u);
  EXPECT_DOUBLE_EQ(s.world.obstacle(1).inflation(), 0.1);
  EXPECT_TRUE(std::holds_alternative<ConvexPolygon>(s.world.obstacle(2).shape()));
  EXPECT_FALSE(s.model.is_arm());
  EXPECT_DOUBLE_EQ(s.model.input_hi()(1), 3.0);
  EXPECT_EQ(s.start, Vec2(1, 1));
  EXPECT_EQ(s.rrt.n_samples, 500);
  EXPECT_EQ(s.rrt.seed, 7u);
  EXPECT_EQ(s.rrt.n_trees, RRTConfig{}.n_trees);
  EXPECT_EQ(s.sopt.n_segments, 3);
  EXPECT_TRUE(s.sopt.auto_merge);
}

TEST(Scenario, ParsesArmScenario)
{
  const Scenario s = parse_scenario(kArm);
  ASSERT_TRUE(s.model.is_arm());
  EXPECT_EQ(s.model.n_joints(), 3);
  EXPECT_EQ(s.goal.size(), 3);
  EXPECT_DOUBLE_EQ(s.model.input_hi()(0), 20.0);
}

TEST(Scenario, RoundTripsThroughJson)
{
  for (const char * text : {kPointMass, kArm}) {
    const Scenario a = parse_scenario(text);
    const Scenario b = parse_scenario(scenario_to_json(a).dump(2));
    EXPECT_EQ(scenario_to_json(a), scenario_to_json(b));
    EXPECT_EQ(a.start, b.start);
    EXPECT_EQ(a.world.obstacles().size(), b.world.obstacles().size());
  }
}

TEST(Scenario, ErrorsCarryTheOffendingLine)
{
  const std::string base = kPointMass;
  EXPECT_EQ(error_line(replace(base, "\"radius\": 1.0", "\"radius\": -1.0")), 5u);
  EXPECT_EQ(error_line(replace(base, "\"shape\": \"polygon\"", "\"shape\": \"blob\"")), 6u);
  EXPECT_EQ(error_line(replace(base, "[[7, 1], [9, 1], [8, 3]]", "[[7, 1], [8, 3], [9, 1]]")), 6u);
  EXPECT_EQ(error_line(replace(base, "\"dt\": 0.1", "\"dt\": \"fast\"")), 9u);
  EXPECT_EQ(error_line(replace(base, "[[-2, 2], [-3, 3]]", "[[2, -2], [-3, 3]]")), 9u);
  EXPECT_EQ(error_line(replace(base, "\"start\": [1, 1]", "\"start\": [1, 1, 1]")), 10u);
  EXPECT_EQ(error_line(replace(base, "\"goal\": [9, 9]", "\"goal\": [5, 5]")), 11u);
  EXPECT_EQ(error_line(replace(base, "\"goal\": [9, 9]", "\"goal\": [12, 9]")), 11u);
  EXPECT_EQ(error_line(replace(base, "\"n_samples\": 500", "\"n_samples\": 0")), 13u);
  EXPECT_EQ(error_line(replace(base, "\"auto_merge\": true", "\"auto_merge\": 1")), 14u);
  EXPECT_EQ(error_line(replace(base, "\"auto_merge\": true", "\"automerge\": true")), 14u);
  EXPECT_EQ(error_line(replace(base, "\"id\": 2", "\"id\": 1")), 6u);
}

TEST(Scenario, SyntaxErrorsCarryTheLine)
{
  const std::string base = kPointMass;
  EXPECT_EQ(error_line(replace(base, "\"start\": [1, 1],", "\"start\": [1, 1]")), 11u);
  EXPECT_EQ(error_line(replace(base, "\"dt\": 0.1,", "\"dt\": 0.1,,")), 9u);
  EXPECT_EQ(error_line(replace(base, "\"bounds\"", "\"bounds\": 1, \"bounds\"")), 3u);
}

TEST(Scenario, MissingKeyPointsAtParentObject)
{
  const std::string text = replace(kPointMass, "\"dt\": 0.1, ", "");
  try {
    (void)parse_scenario(text, "s.json");
    FAIL();
  } catch (const ValidationError & e) {
    EXPECT_EQ(e.line(), 9u);
    EXPECT_NE(std::string(e.what()).find("dt"), std::string::npos);
    EXPECT_EQ(std::string(e.what()).rfind("s.json:9: ", 0), 0u);
  }
}

TEST(Scenario, ArmChecks)
{
  const std::string base = kArm;
  EXPECT_EQ(error_line(replace(base, "\"n_joints\": 3", "\"n_joints\": 4")), 7u);
  EXPECT_EQ(error_line(replace(base, "\"center\": [1.0, 1.0]", "\"center\": [0.1, 0.1]")), 4u);
  EXPECT_EQ(error_line(replace(base, "\"goal\": [3.0, 0, 0]", "\"goal\": [0.785398, 0, 0]")), 11u);
  EXPECT_EQ(error_line(replace(base, "\"sphere_radius\": 0.05", "\"sphere_radius\": 0")), 8u);
}

TEST(Scenario, MissingFileIsIoError) { EXPECT_THROW(load_scenario("/nonexistent/x.json"), IoError); }
