#include <gtest/gtest.h>

#include <numbers>
#include <random>

#include "bott/geometry.hpp"
#include "test_util.hpp"

namespace bott {
namespace {

using testing::make_box;

Box3D square(double x, double y, double side = 1.0, double yaw = 0.0) {
  Box3D b = make_box(x, y);
  b.w = side;
  b.l = side;
  b.yaw = yaw;
  return b;
}

// Monte-Carlo IoU over the bounding square of both footprints.
double sampled_iou(const Box3D& a, const Box3D& b, int samples, std::mt19937_64& rng) {
  auto inside = [](const Box3D& r, double px, double py) {
    const double dx = px - r.x, dy = py - r.y;
    const double c = std::cos(r.yaw), s = std::sin(r.yaw);
    const double u = c * dx + s * dy, v = -s * dx + c * dy;
    return std::abs(u) <= r.l / 2 && std::abs(v) <= r.w / 2;
  };
  const double span = 4.0;
  std::uniform_real_distribution<double> ux(a.x - span, a.x + span), uy(a.y - span, a.y + span);
  long both = 0, either = 0;
  for (int i = 0; i < samples; ++i) {
    const double px = ux(rng), py = uy(rng);
    const bool ia = inside(a, px, py), ib = inside(b, px, py);
    both += ia && ib;
    either += ia || ib;
  }
  return static_cast<double>(both) / static_cast<double>(either);
}

TEST(BevIou, IdenticalBoxesGiveOne) {
  const Box3D a = make_box(3, -2);
  EXPECT_DOUBLE_EQ(bev_iou(a, a), 1.0);
}

TEST(BevIou, DisjointFootprintsGiveZero) {
  EXPECT_EQ(bev_iou(make_box(0, 0), make_box(50, 50)), 0.0);
}

TEST(BevIou, HalfOffsetUnitSquares) {
  EXPECT_NEAR(bev_iou(square(0, 0), square(0.5, 0)), 1.0 / 3.0, 1e-6);
}

TEST(BevIou, AgreesWithMonteCarloArea) {
  std::mt19937_64 rng(7);
  const Box3D a = square(0, 0), b = square(0.5, 0);
  EXPECT_NEAR(sampled_iou(a, b, 1'000'000, rng), bev_iou(a, b), 3e-3);

  const Box3D c = make_box(0, 0), d = [] {
    Box3D r = make_box(0.7, 0.4);
    r.yaw = 0.6;
    return r;
  }();
  EXPECT_NEAR(sampled_iou(c, d, 1'000'000, rng), bev_iou(c, d), 3e-3);
}

TEST(BevIou, RotatedSquareInsideItself) {
  // A unit square rotated by 45 degrees against itself: overlap is a regular octagon.
  const Box3D a = square(0, 0), b = square(0, 0, 1.0, std::numbers::pi / 4);
  const double octagon = 2.0 * (std::numbers::sqrt2 - 1.0);
  EXPECT_NEAR(bev_iou(a, b), octagon / (2.0 - octagon), 1e-12);
}

TEST(BevIou, SymmetricAndRigidInvariant) {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> pos(-3, 3), size(0.5, 5), ang(-std::numbers::pi, std::numbers::pi);
  for (int trial = 0; trial < 500; ++trial) {
    Box3D a = make_box(pos(rng), pos(rng)), b = make_box(pos(rng), pos(rng));
    a.w = size(rng), a.l = size(rng), a.yaw = ang(rng);
    b.w = size(rng), b.l = size(rng), b.yaw = ang(rng);
    const double iou = bev_iou(a, b);
    ASSERT_EQ(iou, bev_iou(b, a));
    ASSERT_GE(iou, 0.0);
    ASSERT_LE(iou, 1.0);

    const double th = ang(rng), tx = pos(rng) * 100, ty = pos(rng) * 100;
    auto move = [&](Box3D r) {
      const double x = r.x, y = r.y;
      r.x = std::cos(th) * x - std::sin(th) * y + tx;
      r.y = std::sin(th) * x + std::cos(th) * y + ty;
      r.yaw = wrap_angle(r.yaw + th);
      return r;
    };
    ASSERT_NEAR(bev_iou(move(a), move(b)), iou, 1e-9);
  }
}

TEST(BevIou, DegenerateFootprintThrows) {
  Box3D a = make_box(0, 0);
  a.w = 0;
  EXPECT_THROW(bev_iou(a, make_box(0, 0)), std::domain_error);
}

TEST(CenterDistance, Basics) {
  EXPECT_EQ(center_distance(make_box(1, 1), make_box(1, 1)), 0.0);
  EXPECT_DOUBLE_EQ(center_distance(make_box(0, 0), make_box(3, 4)), 5.0);
}

TEST(CenterDistance, IgnoresHeight) {
  Box3D a = make_box(0, 0), b = make_box(3, 4);
  b.z = 100;
  EXPECT_DOUBLE_EQ(center_distance(a, b), 5.0);
}

TEST(CenterDistance, MatchesDirectFormula) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(-1e3, 1e3);
  for (int i = 0; i < 1000; ++i) {
    const Box3D a = make_box(u(rng), u(rng)), b = make_box(u(rng), u(rng));
    const double dx = a.x - b.x, dy = a.y - b.y;
    ASSERT_NEAR(center_distance(a, b), std::sqrt(dx * dx + dy * dy), 1e-12);
  }
}

}  // namespace
}  // namespace bott
