#include <gtest/gtest.h>

#include <numbers>
#include <random>

#include "bott/featurizer.hpp"
#include "test_util.hpp"

namespace bott {
namespace {

using testing::make_box;
using testing::make_window;

SlidingWindow random_window(std::mt19937_64& rng, int frames = 16, int per_frame = 5) {
  std::uniform_real_distribution<double> pos(-40, 40), ang(-3.1, 3.1);
  std::uniform_int_distribution<int> cls(0, 2);
  int next_gt = 0;
  return make_window(frames, [&](int f) {
    std::vector<Box3D> boxes;
    for (int i = 0; i < per_frame; ++i) {
      Box3D b = make_box(pos(rng), pos(rng), f, cls(rng), 3, next_gt++ % 7);
      b.yaw = ang(rng);
      b.velocity = std::array<double, 2>{pos(rng) / 10, pos(rng) / 10};
      boxes.push_back(b);
    }
    return boxes;
  });
}

TEST(Featurize, SingleBoxIsItsOwnMinimum) {
  Box3D b = make_box(10, 20);
  b.z = 1;
  const auto w = make_window(1, [&](int) { return std::vector<Box3D>{b}; });
  const auto f = featurize(w);
  ASSERT_EQ(f.rows(), 1);
  EXPECT_EQ(f.values(0, 0), 0.0);
  EXPECT_EQ(f.values(0, 1), 0.0);
  EXPECT_EQ(f.values(0, 2), 0.0);
  EXPECT_EQ(f.values.cols(), kGeometricFeatures + 3);
}

TEST(Featurize, LayoutAndTimeOffset) {
  const auto w = make_window(16, [](int f) {
    Box3D b = make_box(f, 2 * f);
    b.yaw = 0.3;
    return std::vector<Box3D>{b};
  });
  const auto f = featurize(w);
  const Eigen::Index last = f.rows() - 1;
  EXPECT_NEAR(f.values(last, 8), 0.75, 1e-12);
  EXPECT_NEAR(f.values(0, 8), -0.75, 1e-12);
  EXPECT_DOUBLE_EQ(f.values(last, 0), 15.0);
  EXPECT_DOUBLE_EQ(f.values(last, 1), 30.0);
  EXPECT_DOUBLE_EQ(f.values(0, 3), 2.0);
  EXPECT_DOUBLE_EQ(f.values(0, 4), 4.0);
  EXPECT_DOUBLE_EQ(f.values(0, 5), 1.5);
  EXPECT_DOUBLE_EQ(f.values(0, 6), std::sin(0.3));
  EXPECT_DOUBLE_EQ(f.values(0, 7), std::cos(0.3));
  EXPECT_DOUBLE_EQ(f.values(0, kGeometricFeatures), 0.9);
  EXPECT_EQ(f.frame_of[last], 15);
  EXPECT_EQ(f.class_of[0], 0);
}

TEST(Featurize, Invariants) {
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 20; ++trial) {
    const auto w = random_window(rng);
    const auto f = featurize(w);
    for (int c = 0; c < 3; ++c) EXPECT_EQ(f.values.col(c).minCoeff(), 0.0);
    for (Eigen::Index i = 0; i < f.rows(); ++i) {
      const double s = f.values(i, 6), co = f.values(i, 7);
      ASSERT_NEAR(s * s + co * co, 1.0, 1e-9);
      ASSERT_LE(std::abs(f.values(i, 8)), 0.75 + 1e-12);
    }
  }
}

TEST(Featurize, TranslationInvariant) {
  const auto w = make_window(4, [](int f) {
    return std::vector<Box3D>{make_box(0.25 * f, 1.5), make_box(-3.5, 0.75 * f)};
  });
  SlidingWindow moved = w;
  for_each_box(moved, [](Box3D& b) {
    b.x += 100;
    b.y -= 50;
    b.z += 3;
  });
  EXPECT_EQ(featurize(w).values, featurize(moved).values);

  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> shift(-1e4, 1e4);
  for (int trial = 0; trial < 20; ++trial) {
    const auto base = random_window(rng);
    SlidingWindow t = base;
    const double dx = shift(rng), dy = shift(rng), dz = shift(rng);
    for_each_box(t, [&](Box3D& b) {
      b.x += dx;
      b.y += dy;
      b.z += dz;
    });
    ASSERT_LE((featurize(base).values - featurize(t).values).cwiseAbs().maxCoeff(), 1e-9);
  }
}

TEST(Featurize, EmptyWindowThrows) {
  SlidingWindow w;
  w.frames.push_back({0, 0.0, {}});
  EXPECT_THROW(featurize(w), std::domain_error);
}

TEST(Augment, IdentityUpToRecentering) {
  std::mt19937_64 rng(3);
  const auto w = random_window(rng);
  AugmentConfig cfg;
  cfg.flip_x_prob = cfg.flip_y_prob = 0;
  cfg.yaw_range = 0;
  const auto out = augment(w, cfg, rng);
  const auto a = w.rows(), b = out.rows();
  ASSERT_EQ(a.size(), b.size());
  const double dx = a[0]->x - b[0]->x, dy = a[0]->y - b[0]->y;
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_NEAR(a[i]->x - b[i]->x, dx, 1e-9);
    EXPECT_NEAR(a[i]->y - b[i]->y, dy, 1e-9);
    EXPECT_EQ(a[i]->yaw, b[i]->yaw);
  }
  EXPECT_EQ(featurize(w).values.rightCols(kGeometricFeatures + 3 - 2),
            featurize(out).values.rightCols(kGeometricFeatures + 3 - 2));
}

TEST(Augment, FlipAlgebra) {
  Box3D b = make_box(1, 2);
  b.z = 0;
  b.yaw = 0.3;
  SlidingWindow w;
  w.frames.push_back({0, 0.0, {b}});
  flip_x(w);
  EXPECT_EQ(w.frames[0].boxes[0].x, 1.0);
  EXPECT_EQ(w.frames[0].boxes[0].y, -2.0);
  EXPECT_DOUBLE_EQ(w.frames[0].boxes[0].yaw, -0.3);
  flip_x(w);
  EXPECT_EQ(w.frames[0].boxes[0].y, 2.0);
  EXPECT_DOUBLE_EQ(w.frames[0].boxes[0].yaw, 0.3);

  flip_y(w);
  EXPECT_EQ(w.frames[0].boxes[0].x, -1.0);
  EXPECT_NEAR(w.frames[0].boxes[0].yaw, std::numbers::pi - 0.3, 1e-12);
  flip_y(w);
  EXPECT_EQ(w.frames[0].boxes[0].x, 1.0);
  EXPECT_NEAR(w.frames[0].boxes[0].yaw, 0.3, 1e-12);
}

TEST(Augment, QuarterTurn) {
  Box3D b = make_box(1, 0);
  b.velocity = std::array<double, 2>{2.0, 0.0};
  SlidingWindow w;
  w.frames.push_back({0, 0.0, {b}});
  rotate(w, std::numbers::pi / 2);
  const Box3D& r = w.frames[0].boxes[0];
  EXPECT_NEAR(r.x, 0.0, 1e-12);
  EXPECT_NEAR(r.y, 1.0, 1e-12);
  EXPECT_NEAR(r.yaw, std::numbers::pi / 2, 1e-12);
  EXPECT_NEAR((*r.velocity)[0], 0.0, 1e-12);
  EXPECT_NEAR((*r.velocity)[1], 2.0, 1e-12);
}

int positive_links(const SlidingWindow& w) {
  const auto rows = w.rows();
  int n = 0;
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = i + 1; j < rows.size(); ++j)
      n += rows[i]->gt_track_id && rows[i]->gt_track_id == rows[j]->gt_track_id;
  return n;
}

TEST(Augment, PreservesIdentityAttributes) {
  std::mt19937_64 rng(4);
  AugmentConfig cfg;
  for (int trial = 0; trial < 20; ++trial) {
    const auto w = random_window(rng);
    const auto out = augment(w, cfg, rng);
    const auto a = w.rows(), b = out.rows();
    ASSERT_EQ(a.size(), b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
      ASSERT_EQ(a[i]->w, b[i]->w);
      ASSERT_EQ(a[i]->l, b[i]->l);
      ASSERT_EQ(a[i]->h, b[i]->h);
      ASSERT_EQ(a[i]->t, b[i]->t);
      ASSERT_EQ(a[i]->class_scores, b[i]->class_scores);
      ASSERT_EQ(a[i]->gt_track_id, b[i]->gt_track_id);
      ASSERT_GT(b[i]->yaw, -std::numbers::pi);
      ASSERT_LE(b[i]->yaw, std::numbers::pi);
    }
    ASSERT_EQ(positive_links(w), positive_links(out));
  }
}

TEST(Augment, DropsWholeTracksDownToBudget) {
  std::mt19937_64 rng(5);
  AugmentConfig cfg;
  cfg.max_boxes = 30;
  for (int trial = 0; trial < 20; ++trial) {
    const auto w = random_window(rng);
    const auto out = augment(w, cfg, rng);
    ASSERT_LE(out.N(), 30u);
    std::map<int, int> before, after;
    for (const Box3D* b : w.rows())
      if (b->gt_track_id) ++before[*b->gt_track_id];
    for (const Box3D* b : out.rows())
      if (b->gt_track_id) ++after[*b->gt_track_id];
    for (auto [id, n] : after) ASSERT_EQ(n, before[id]) << "track " << id << " partially dropped";
  }
}

TEST(AugmentConfig, Validation) {
  AugmentConfig cfg;
  cfg.max_boxes = 0;
  EXPECT_THROW(cfg.validate(), std::domain_error);
  cfg = {};
  cfg.yaw_range = 4;
  EXPECT_THROW(cfg.validate(), std::domain_error);
}

}  // namespace
}  // namespace bott
