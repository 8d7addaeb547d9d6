#include <gtest/gtest.h>

#include <algorithm>
#include <random>

#include "bott/metrics.hpp"
#include "test_util.hpp"

namespace bott {
namespace {

using testing::make_box;

/// Two GT identities (1 at x=0, 2 at x=10) over `frames` frames.
SceneDB two_tracks(int frames = 5) {
  SceneDB s;
  s.scene_id = "m";
  s.class_names = {"car", "pedestrian", "bicycle"};
  for (int f = 0; f < frames; ++f)
    s.frames.push_back({f, f / 10.0, {make_box(0, 0, f, 0, 3, 1, 0), make_box(10, 0, f, 0, 3, 2, 1)}});
  rebuild_gt_tracks(s);
  return s;
}

TrackedBox pred(int id, double x, int frame, double score = 0.9) {
  Box3D b = make_box(x, 0, frame);
  b.det_score = score;
  return {id, b};
}

std::vector<TrackFrame> perfect(const SceneDB& s, int offset = 100) {
  std::vector<TrackFrame> out;
  for (const auto& f : s.frames) {
    TrackFrame tf{f.frame_idx, f.t, {}};
    for (const auto& b : f.boxes) tf.tracks.push_back({*b.gt_track_id + offset, b});
    out.push_back(tf);
  }
  return out;
}

TEST(MatchFrame, RadiusAndExactMatch) {
  EXPECT_EQ(match_frame({make_box(0, 0)}, {make_box(0, 0)}), (Assignment{{0, 0}}));
  EXPECT_TRUE(match_frame({make_box(3, 0)}, {make_box(0, 0)}).empty());
  EXPECT_TRUE(match_frame({make_box(0, 0, 0, 1)}, {make_box(0, 0, 0, 0)}).empty());
}

TEST(MatchFrame, CrossingCaseMinimizesTotalDistance) {
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> u(-0.7, 0.7);
  for (int trial = 0; trial < 200; ++trial) {
    const std::vector<Box3D> p{make_box(u(rng), u(rng)), make_box(u(rng), u(rng))};
    const std::vector<Box3D> g{make_box(u(rng), u(rng)), make_box(u(rng), u(rng))};
    const auto m = match_frame(p, g);
    ASSERT_EQ(m.size(), 2u);
    double got = 0;
    for (auto [a, b] : m) got += center_distance(p[static_cast<std::size_t>(a)], g[static_cast<std::size_t>(b)]);
    const double best = std::min(center_distance(p[0], g[0]) + center_distance(p[1], g[1]),
                                 center_distance(p[0], g[1]) + center_distance(p[1], g[0]));
    EXPECT_NEAR(got, best, 1e-12);
  }
}

TEST(Evaluate, PerfectPredictions) {
  const SceneDB s = two_tracks();
  const EvalResult r = evaluate(perfect(s), s);
  EXPECT_DOUBLE_EQ(r.mota(), 1.0);
  EXPECT_EQ(r.ids(), 0);
  EXPECT_DOUBLE_EQ(r.counts.recall(), 1.0);
  EXPECT_DOUBLE_EQ(r.samota, 1.0);
}

TEST(Evaluate, SplitTrackCountsOneSwitch) {
  const SceneDB s = two_tracks(6);
  auto p = perfect(s);
  for (std::size_t f = 3; f < p.size(); ++f) p[f].tracks[0].track_id = 7;
  EXPECT_EQ(evaluate(p, s).ids(), 1);
}

TEST(Evaluate, HandCountedScenario) {
  const SceneDB s = two_tracks();
  std::vector<TrackFrame> p;
  for (const auto& f : s.frames) p.push_back({f.frame_idx, f.t, {}});
  for (int f : {0, 1, 3, 4}) p[static_cast<std::size_t>(f)].tracks.push_back(pred(f < 3 ? 100 : 101, 0.3, f));
  for (int f : {0, 1, 2, 3}) p[static_cast<std::size_t>(f)].tracks.push_back(pred(200, 10.2, f));
  p[1].tracks.push_back(pred(300, 50, 1));
  const EvalResult r = evaluate(p, s);
  EXPECT_EQ(r.counts.gt, 10);
  EXPECT_EQ(r.counts.fn, 2);
  EXPECT_EQ(r.counts.fp, 1);
  EXPECT_EQ(r.counts.ids, 1);
  EXPECT_EQ(r.counts.matches, 8);
  EXPECT_NEAR(r.mota(), 0.6, 1e-12);
  EXPECT_NEAR(r.counts.mismatch_ratio(), 1.0 / 8.0, 1e-12);
  EXPECT_EQ(r.per_class.at("car").counts, r.counts);
}

TEST(Evaluate, RelabelingInvariantAndFalsePositivesHurt) {
  const SceneDB s = two_tracks();
  const double base = evaluate(perfect(s, 0), s).mota();
  EXPECT_DOUBLE_EQ(evaluate(perfect(s, 55), s).mota(), base);
  auto p = perfect(s);
  p[2].tracks.push_back(pred(999, -40, 2));
  EXPECT_LT(evaluate(p, s).mota(), base);
}

TEST(Evaluate, SamotaSweepsScores) {
  const SceneDB s = two_tracks();
  auto p = perfect(s);
  for (auto& f : p) f.tracks.push_back(pred(500, 40, f.frame_idx, 0.1));
  const EvalResult r = evaluate(p, s);
  EXPECT_NEAR(r.mota(), 0.5, 1e-12);
  EXPECT_GT(r.samota, r.mota());
  EXPECT_LE(r.samota, 1.0);
}

TEST(Evaluate, Errors) {
  SceneDB empty = two_tracks();
  for (auto& f : empty.frames) f.boxes.clear();
  rebuild_gt_tracks(empty);
  EXPECT_THROW(evaluate(std::vector<TrackFrame>{}, empty), std::domain_error);
  EXPECT_THROW(evaluate(std::vector<SceneEval>{}), std::domain_error);
}

TEST(Evaluate, GtBoxesTakePrecedenceOverLabels) {
  SceneDB s = two_tracks(2);
  s.gt_boxes = {{make_box(0, 0, 0, 0, 3, 1)}, {make_box(0, 0, 1, 0, 3, 1)}};
  rebuild_gt_tracks(s);
  const EvalResult r = evaluate(perfect(two_tracks(2)), s);
  EXPECT_EQ(r.counts.gt, 2);
  EXPECT_EQ(r.counts.fp, 2);
}

TEST(EvalJson, CarriesAllFields) {
  const SceneDB s = two_tracks();
  const nlohmann::json j = to_json(evaluate(perfect(s), s));
  for (const char* k : {"mota", "recall", "ids", "fp", "fn", "gt", "matches", "mismatch_ratio", "samota", "per_class"})
    EXPECT_TRUE(j.contains(k)) << k;
}

}  // namespace
}  // namespace bott
