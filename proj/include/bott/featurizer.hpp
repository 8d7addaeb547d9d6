#pragma once

// Raw per-box features for the network and training-time augmentation.

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <map>
#include <numbers>
#include <random>
#include <stdexcept>
#include <vector>

#include "bott/types.hpp"

namespace bott {

/// Features before the class block: centered xyz, wlh, sin/cos yaw, time offset.
inline constexpr int kGeometricFeatures = 9;

struct RawFeatureMatrix {
  // N x (9 + C): x-xmin, y-ymin, z-zmin, w, l, h, sin yaw, cos yaw, delta_t, c_1..c_C
  Eigen::MatrixXd values;
  std::vector<int> frame_of;
  std::vector<int> class_of;
  std::vector<int> box_ref;

  Eigen::Index rows() const { return values.rows(); }
};

/// Midpoint between the first and last frame timestamps of the window.
inline double window_center_time(const SlidingWindow& w) {
  return 0.5 * (w.frames.front().t + w.frames.back().t);
}

inline RawFeatureMatrix featurize(const SlidingWindow& window) {
  const auto rows = window.rows();
  if (rows.empty()) throw std::domain_error("featurize: empty window");
  const std::size_t C = rows.front()->class_scores.size();

  double xmin = rows.front()->x, ymin = rows.front()->y, zmin = rows.front()->z;
  for (const Box3D* b : rows) {
    xmin = std::min(xmin, b->x);
    ymin = std::min(ymin, b->y);
    zmin = std::min(zmin, b->z);
  }
  const double t_mid = window_center_time(window);

  RawFeatureMatrix out;
  const auto N = static_cast<Eigen::Index>(rows.size());
  out.values.resize(N, kGeometricFeatures + static_cast<Eigen::Index>(C));
  out.frame_of.reserve(rows.size());
  out.class_of.reserve(rows.size());
  out.box_ref.reserve(rows.size());
  for (Eigen::Index i = 0; i < N; ++i) {
    const Box3D& b = *rows[static_cast<std::size_t>(i)];
    if (b.class_scores.size() != C) throw std::domain_error("featurize: inconsistent class score width");
    auto r = out.values.row(i);
    r(0) = b.x - xmin;
    r(1) = b.y - ymin;
    r(2) = b.z - zmin;
    r(3) = b.w;
    r(4) = b.l;
    r(5) = b.h;
    r(6) = std::sin(b.yaw);
    r(7) = std::cos(b.yaw);
    r(8) = b.t - t_mid;
    for (std::size_t c = 0; c < C; ++c) r(kGeometricFeatures + static_cast<Eigen::Index>(c)) = b.class_scores[c];
    out.frame_of.push_back(b.frame_idx);
    out.class_of.push_back(b.class_id());
    out.box_ref.push_back(b.box_id);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Augmentation

struct AugmentConfig {
  int max_boxes = 3000;
  double flip_x_prob = 0.5;
  double flip_y_prob = 0.5;
  double yaw_range = std::numbers::pi / 2;
  double drop_track_prob = 0.0;
  std::uint64_t rng_seed = 0;

  void validate() const {
    if (max_boxes <= 0) throw std::domain_error("AugmentConfig: max_boxes must be positive");
    if (!(yaw_range >= 0 && yaw_range <= std::numbers::pi))
      throw std::domain_error("AugmentConfig: yaw_range must lie in [0, pi]");
    for (double p : {flip_x_prob, flip_y_prob, drop_track_prob})
      if (!(p >= 0 && p <= 1)) throw std::domain_error("AugmentConfig: probabilities must lie in [0, 1]");
  }
};

template <typename Fn>
void for_each_box(SlidingWindow& w, Fn&& fn) {
  for (auto& f : w.frames)
    for (auto& b : f.boxes) fn(b);
}

/// Mirror across the x axis: y -> -y, yaw -> -yaw.
inline void flip_x(SlidingWindow& w) {
  for_each_box(w, [](Box3D& b) {
    b.y = -b.y;
    b.yaw = wrap_angle(-b.yaw);
    if (b.velocity) (*b.velocity)[1] = -(*b.velocity)[1];
  });
}

/// Mirror across the y axis: x -> -x, yaw -> pi - yaw.
inline void flip_y(SlidingWindow& w) {
  for_each_box(w, [](Box3D& b) {
    b.x = -b.x;
    b.yaw = wrap_angle(std::numbers::pi - b.yaw);
    if (b.velocity) (*b.velocity)[0] = -(*b.velocity)[0];
  });
}

/// Rotates centers, headings and velocities about the origin.
inline void rotate(SlidingWindow& w, double angle) {
  const double c = std::cos(angle), s = std::sin(angle);
  for_each_box(w, [&](Box3D& b) {
    const double x = b.x, y = b.y;
    b.x = c * x - s * y;
    b.y = s * x + c * y;
    b.yaw = wrap_angle(b.yaw + angle);
    if (b.velocity) {
      const double vx = (*b.velocity)[0], vy = (*b.velocity)[1];
      *b.velocity = {c * vx - s * vy, s * vx + c * vy};
    }
  });
}

/// Shifts xy so the window's bounding-box center is the origin.
inline void recenter(SlidingWindow& w) {
  if (w.N() == 0) return;
  double xmin = std::numeric_limits<double>::infinity(), xmax = -xmin;
  double ymin = xmin, ymax = -xmin;
  for_each_box(w, [&](Box3D& b) {
    xmin = std::min(xmin, b.x);
    xmax = std::max(xmax, b.x);
    ymin = std::min(ymin, b.y);
    ymax = std::max(ymax, b.y);
  });
  const double cx = 0.5 * (xmax + xmin), cy = 0.5 * (ymax + ymin);
  for_each_box(w, [&](Box3D& b) {
    b.x -= cx;
    b.y -= cy;
  });
}

/// Removes whole ground-truth identities (false positives count as
/// singleton units): first each unit independently with `drop_prob`, then
/// uniformly chosen units until at most `max_boxes` remain.
template <typename Rng>
void drop_tracks(SlidingWindow& w, double drop_prob, int max_boxes, Rng& rng) {
  // One unit per gt identity and one per false-positive box.
  using Key = std::pair<bool, int>;  // (is_fp, gt id or box id)
  std::map<Key, int> unit_size;
  for_each_box(w, [&](Box3D& b) {
    const Key k = b.gt_track_id ? Key{false, *b.gt_track_id} : Key{true, b.box_id};
    ++unit_size[k];
  });

  std::map<Key, bool> dropped;
  std::bernoulli_distribution coin(drop_prob);
  long total = 0;
  for (auto& [k, n] : unit_size) {
    const bool d = drop_prob > 0 && coin(rng);
    dropped[k] = d;
    if (!d) total += n;
  }
  if (total > max_boxes) {
    std::vector<Key> alive;
    for (auto& [k, d] : dropped)
      if (!d) alive.push_back(k);
    std::shuffle(alive.begin(), alive.end(), rng);
    for (const Key& k : alive) {
      if (total <= max_boxes) break;
      dropped[k] = true;
      total -= unit_size[k];
    }
  }
  for (auto& f : w.frames) {
    std::erase_if(f.boxes, [&](const Box3D& b) {
      const Key k = b.gt_track_id ? Key{false, *b.gt_track_id} : Key{true, b.box_id};
      return dropped[k];
    });
  }
}

template <typename Rng>
SlidingWindow augment(SlidingWindow window, const AugmentConfig& cfg, Rng& rng) {
  cfg.validate();
  drop_tracks(window, cfg.drop_track_prob, cfg.max_boxes, rng);
  recenter(window);
  std::bernoulli_distribution fx(cfg.flip_x_prob), fy(cfg.flip_y_prob);
  if (fx(rng)) flip_x(window);
  if (fy(rng)) flip_y(window);
  if (cfg.yaw_range > 0) {
    std::uniform_real_distribution<double> yaw(-cfg.yaw_range, cfg.yaw_range);
    rotate(window, yaw(rng));
  }
  return window;
}

}  // namespace bott
