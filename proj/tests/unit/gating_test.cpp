#include <gtest/gtest.h>

#include "bott/gating.hpp"
#include "test_util.hpp"

namespace bott {
namespace {

using testing::make_box;

const GateConfig kGate = make_gate_config({"car", "pedestrian", "bicycle"});

Box3D with_velocity(Box3D b, double vx, double vy) {
  b.velocity = std::array<double, 2>{vx, vy};
  return b;
}

TEST(Gate, CarsTooFarForElapsedTime) {
  EXPECT_FALSE(gate(make_box(0, 0, 0), make_box(80, 0, 10), kGate));
  EXPECT_TRUE(gate(make_box(0, 0, 0), make_box(34, 0, 10), kGate));
}

TEST(Gate, StaticPedestrianCannotJump) {
  const Box3D a = with_velocity(make_box(0, 0, 0, 1), 0.1, 0.0);
  const Box3D b = with_velocity(make_box(3, 0, 10, 1), 3.0, 0.0);
  EXPECT_FALSE(gate(a, b, kGate));
  EXPECT_TRUE(gate(a, with_velocity(make_box(1.9, 0, 10, 1), 3.0, 0.0), kGate));
}

TEST(Gate, DifferentClassesNeverLink) {
  EXPECT_FALSE(gate(make_box(0, 0, 0, 0), make_box(0, 0, 1, 1), kGate));
  EXPECT_FALSE(gate(make_box(0, 0, 0, 2), make_box(100, 0, 30, 0), kGate));
}

TEST(Gate, SameInstantNeverLinks) { EXPECT_FALSE(gate(make_box(0, 0, 3), make_box(0.1, 0, 3), kGate)); }

TEST(Gate, DistanceFloorVersusCap) {
  // Pedestrian 0.1 s apart: reach 1.0 m, floor 1.5 m.
  const Box3D a = make_box(0, 0, 0, 1), b = make_box(1.2, 0, 1, 1);
  EXPECT_TRUE(gate(a, b, kGate));
  GateConfig cap = kGate;
  cap.distance_rule = DistanceRule::cap;
  EXPECT_FALSE(gate(a, b, cap));
  EXPECT_TRUE(gate(a, make_box(0.9, 0, 1, 1), cap));
}

TEST(Gate, Symmetric) {
  const Box3D a = with_velocity(make_box(0, 0, 0, 1), 0.2, 0.0), b = make_box(2.5, 0, 4, 1);
  EXPECT_EQ(gate(a, b, kGate), gate(b, a, kGate));
}

TEST(GateConfig, DefaultsAndOverrides) {
  EXPECT_EQ(kGate.limits(0), (ClassLimits{35.0, 3.0, 0.4}));
  EXPECT_EQ(kGate.limits(1), (ClassLimits{10.0, 1.5, 0.5}));
  EXPECT_EQ(kGate.limits(2), (ClassLimits{20.0, 2.0, 0.6}));
  EXPECT_EQ(make_gate_config({"truck"}).limits(0), (ClassLimits{35.0, 3.0, 0.5}));
  const auto g = make_gate_config({"car"}, {{"car", ClassLimits{20.0, 1.0, 0.7}}});
  EXPECT_DOUBLE_EQ(g.limits(0).min_link_score, 0.7);
  EXPECT_THROW(g.limits(1), std::domain_error);
  EXPECT_EQ(class_max_speeds(kGate), (std::vector<double>{35.0, 10.0, 20.0}));
  GateConfig bad = kGate;
  bad.per_class[0].min_link_score = 1.5;
  EXPECT_THROW(bad.validate(), ConfigError);
}

}  // namespace
}  // namespace bott
