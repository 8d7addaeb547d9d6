#pragma once

// Track-database generation: per-class NMS and score filtering, ground-truth
// interpolation onto the detection grid, class-aware detection/GT matching
// and sliding-window enumeration.

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <map>
#include <numbers>
#include <stdexcept>
#include <string>
#include <vector>

#include "bott/config_json.hpp"
#include "bott/geometry.hpp"
#include "bott/hungarian.hpp"
#include "bott/types.hpp"

namespace bott {

struct ClassFilter {
  double nms_iou = 0.1;
  double score_min = 0.1;

  bool operator==(const ClassFilter&) const = default;
};

inline void to_json(nlohmann::json& j, const ClassFilter& f) {
  j = {{"nms_iou", f.nms_iou}, {"score_min", f.score_min}};
}

inline void from_json(const nlohmann::json& j, ClassFilter& f) {
  check_keys(j, {"nms_iou", "score_min"}, "class filter");
  read_opt(j, "nms_iou", f.nms_iou);
  read_opt(j, "score_min", f.score_min);
}

/// Default filter thresholds keyed by class name.
inline ClassFilter default_class_filter(const std::string& name) {
  if (name == "car" || name == "vehicle") return {0.1, 0.2};
  if (name == "pedestrian") return {0.25, 0.2};
  return {0.1, 0.1};
}

struct DbGenConfig {
  // Overrides by class name; missing classes use default_class_filter().
  std::map<std::string, ClassFilter> per_class;
  double match_iou_min = 1e-4;
  double target_hz = 10.0;

  ClassFilter filter_for(const std::string& name) const {
    auto it = per_class.find(name);
    return it == per_class.end() ? default_class_filter(name) : it->second;
  }

  std::vector<ClassFilter> resolve(const std::vector<std::string>& class_names) const {
    std::vector<ClassFilter> out;
    for (const auto& n : class_names) out.push_back(filter_for(n));
    return out;
  }

  void validate() const {
    for (const auto& [n, f] : per_class)
      if (!(f.nms_iou >= 0 && f.nms_iou <= 1 && f.score_min >= 0 && f.score_min <= 1))
        throw ConfigError("gen_db: thresholds for '" + n + "' must lie in [0, 1]");
    if (!(match_iou_min >= 0 && match_iou_min <= 1)) throw ConfigError("gen_db: match_iou_min must lie in [0, 1]");
    if (!(target_hz > 0)) throw ConfigError("gen_db: target_hz must be positive");
  }
};

inline void to_json(nlohmann::json& j, const DbGenConfig& c) {
  j = {{"per_class", c.per_class}, {"match_iou_min", c.match_iou_min}, {"target_hz", c.target_hz}};
}

inline void from_json(const nlohmann::json& j, DbGenConfig& c) {
  check_keys(j, {"per_class", "match_iou_min", "target_hz"}, "gen_db");
  read_opt(j, "per_class", c.per_class);
  read_opt(j, "match_iou_min", c.match_iou_min);
  read_opt(j, "target_hz", c.target_hz);
}

/// Per class: drops boxes under score_min, then greedy NMS by descending
/// det_score (ties by box_id) suppressing BEV IoU > nms_iou. Survivors keep
/// their original order.
inline DetectionFrame nms_filter(const DetectionFrame& frame, const std::vector<ClassFilter>& filters) {
  std::vector<std::size_t> order;
  for (std::size_t i = 0; i < frame.boxes.size(); ++i) {
    const Box3D& b = frame.boxes[i];
    const int c = b.class_id();
    if (c < 0 || static_cast<std::size_t>(c) >= filters.size())
      throw std::domain_error("nms_filter: no thresholds for class " + std::to_string(c));
    if (b.det_score >= filters[static_cast<std::size_t>(c)].score_min) order.push_back(i);
  }
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    const Box3D &A = frame.boxes[a], &B = frame.boxes[b];
    if (A.det_score != B.det_score) return A.det_score > B.det_score;
    return A.box_id < B.box_id;
  });
  std::vector<char> keep(frame.boxes.size(), 0);
  std::vector<std::size_t> kept;
  for (std::size_t i : order) {
    const Box3D& b = frame.boxes[i];
    const double thr = filters[static_cast<std::size_t>(b.class_id())].nms_iou;
    bool suppressed = false;
    for (std::size_t k : kept) {
      const Box3D& a = frame.boxes[k];
      if (a.class_id() == b.class_id() && bev_iou(a, b) > thr) {
        suppressed = true;
        break;
      }
    }
    if (!suppressed) {
      kept.push_back(i);
      keep[i] = 1;
    }
  }
  DetectionFrame out{frame.frame_idx, frame.t, {}};
  for (std::size_t i = 0; i < frame.boxes.size(); ++i)
    if (keep[i]) out.boxes.push_back(frame.boxes[i]);
  return out;
}

/// Linear blend of two boxes; yaw takes the shorter arc.
inline Box3D lerp_box(const Box3D& a, const Box3D& b, double t) {
  const double s = (t - a.t) / (b.t - a.t);
  Box3D out = a;
  out.x = a.x + s * (b.x - a.x);
  out.y = a.y + s * (b.y - a.y);
  out.z = a.z + s * (b.z - a.z);
  out.w = a.w + s * (b.w - a.w);
  out.l = a.l + s * (b.l - a.l);
  out.h = a.h + s * (b.h - a.h);
  out.yaw = wrap_angle(a.yaw + s * wrap_angle(b.yaw - a.yaw));
  out.t = t;
  out.velocity.reset();
  out.interpolated = true;
  return out;
}

/// Resamples ground-truth tracks onto the grid t0 + k / target_hz. New
/// boxes fill grid instants strictly between consecutive original boxes;
/// originals are kept untouched and tracks are never extrapolated.
/// Velocities of new boxes come from central differences of centers.
/// Frame indices are renumbered onto the target grid.
inline std::vector<Track> interpolate_gt(const std::vector<Track>& tracks, double source_hz, double target_hz,
                                         double t0 = 0.0) {
  if (!(source_hz > 0 && target_hz > 0)) throw std::domain_error("interpolate_gt: frequencies must be positive");
  if (target_hz < source_hz) throw std::domain_error("interpolate_gt: target frequency below source");
  const double period = 1.0 / target_hz;
  const double tol = 1e-6 * period;
  std::vector<Track> out;
  out.reserve(tracks.size());
  for (const Track& tr : tracks) {
    Track nt(tr.id(), tr.class_id());
    nt.set_status(tr.status());
    const auto& bx = tr.boxes();
    for (std::size_t i = 0; i < bx.size(); ++i) {
      Box3D orig = bx[i];
      orig.frame_idx = static_cast<int>(std::lround((orig.t - t0) / period));
      nt.add(orig);
      if (i + 1 == bx.size()) break;
      const Box3D &a = bx[i], &b = bx[i + 1];
      const auto k0 = static_cast<long>(std::floor((a.t - t0) / period + 1e-6)) + 1;
      for (long k = k0;; ++k) {
        const double t = t0 + static_cast<double>(k) * period;
        if (t >= b.t - tol) break;
        if (t <= a.t + tol) continue;
        Box3D nb = lerp_box(a, b, t);
        nb.frame_idx = static_cast<int>(k);
        nt.add(nb);
      }
    }
    // Central-difference velocities for the synthesized boxes.
    std::vector<Box3D> boxes = nt.boxes();
    bool any = false;
    for (std::size_t i = 0; i < boxes.size(); ++i) {
      if (!boxes[i].interpolated) continue;
      const Box3D& p = boxes[i - 1];
      const Box3D& q = boxes[i + 1];
      boxes[i].velocity = std::array<double, 2>{(q.x - p.x) / (q.t - p.t), (q.y - p.y) / (q.t - p.t)};
      any = true;
    }
    if (any) {
      Track vt(tr.id(), tr.class_id());
      vt.set_status(tr.status());
      for (const auto& b : boxes) vt.add(b);
      nt = std::move(vt);
    }
    out.push_back(std::move(nt));
  }
  return out;
}

/// Per class, Hungarian matching on 1 - BEV IoU. Matched detections take the
/// GT identity; the rest become false positives.
inline DetectionFrame associate_gt(const DetectionFrame& dets, const std::vector<Box3D>& gts,
                                   double match_iou_min) {
  DetectionFrame out = dets;
  for (auto& b : out.boxes) b.gt_track_id.reset();
  std::map<int, std::vector<std::size_t>> det_by_class, gt_by_class;
  for (std::size_t i = 0; i < dets.boxes.size(); ++i) det_by_class[dets.boxes[i].class_id()].push_back(i);
  for (std::size_t j = 0; j < gts.size(); ++j) gt_by_class[gts[j].class_id()].push_back(j);
  for (const auto& [cls, di] : det_by_class) {
    auto it = gt_by_class.find(cls);
    if (it == gt_by_class.end()) continue;
    const auto& gj = it->second;
    Eigen::MatrixXd iou(static_cast<Eigen::Index>(di.size()), static_cast<Eigen::Index>(gj.size()));
    for (std::size_t a = 0; a < di.size(); ++a)
      for (std::size_t b = 0; b < gj.size(); ++b)
        iou(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b)) = bev_iou(dets.boxes[di[a]], gts[gj[b]]);
    const Eigen::MatrixXd cost = (1.0 - iou.array()).matrix();
    for (auto [a, b] : hungarian(cost)) {
      if (iou(a, b) <= match_iou_min) continue;
      out.boxes[di[static_cast<std::size_t>(a)]].gt_track_id = gts[gj[static_cast<std::size_t>(b)]].gt_track_id;
    }
  }
  return out;
}

/// Builds a labeled scene from raw detections and ground truth: GT is
/// interpolated onto the detection grid, detections are filtered and
/// matched frame by frame. `gt.frames` hold labeled GT boxes.
inline SceneDB generate_db(const SceneDB& dets, const SceneDB& gt, const DbGenConfig& cfg) {
  cfg.validate();
  if (dets.class_names != gt.class_names) throw std::domain_error("generate_db: class taxonomies differ");
  if (std::abs(dets.frequency_hz - cfg.target_hz) > 1e-9 * cfg.target_hz)
    throw std::domain_error("generate_db: detections are not at the target frequency");
  if (dets.frames.empty()) throw std::domain_error("generate_db: no detection frames");

  std::vector<std::vector<Box3D>> gt_frames;
  for (const auto& f : gt.frames) gt_frames.push_back(f.boxes);
  const double t0 = dets.frames.front().t;
  const auto tracks = interpolate_gt(tracks_from_labels(gt_frames), gt.frequency_hz, cfg.target_hz, t0);

  const double period = 1.0 / cfg.target_hz;
  std::map<long, std::vector<Box3D>> gt_at;
  for (const auto& tr : tracks)
    for (const auto& b : tr.boxes()) gt_at[std::lround((b.t - t0) / period)].push_back(b);

  const auto filters = cfg.resolve(dets.class_names);
  SceneDB out;
  out.scene_id = dets.scene_id;
  out.frequency_hz = dets.frequency_hz;
  out.class_names = dets.class_names;
  for (const auto& f : dets.frames) {
    const long k = std::lround((f.t - t0) / period);
    std::vector<Box3D> g = gt_at.count(k) ? gt_at[k] : std::vector<Box3D>{};
    for (std::size_t i = 0; i < g.size(); ++i) {
      g[i].frame_idx = f.frame_idx;
      g[i].t = f.t;
      g[i].box_id = static_cast<int>(i);
    }
    out.frames.push_back(associate_gt(nms_filter(f, filters), g, cfg.match_iou_min));
    out.gt_boxes.push_back(std::move(g));
  }
  rebuild_gt_tracks(out);
  return out;
}

/// Window of K frames starting at frame `start`.
inline SlidingWindow window_at(const SceneDB& scene, std::size_t start, std::size_t K) {
  if (start + K > scene.frames.size()) throw std::out_of_range("window_at: window exceeds the scene");
  SlidingWindow w;
  w.frames.assign(scene.frames.begin() + static_cast<std::ptrdiff_t>(start),
                  scene.frames.begin() + static_cast<std::ptrdiff_t>(start + K));
  return w;
}

/// Start indices of the windows [i, i + K) for i = 0, stride, ...
inline std::vector<std::size_t> window_starts(std::size_t num_frames, std::size_t K, std::size_t stride) {
  if (K == 0 || stride == 0) throw std::domain_error("window_starts: K and stride must be positive");
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i + K <= num_frames; i += stride) out.push_back(i);
  return out;
}

inline std::vector<SlidingWindow> build_windows(const SceneDB& scene, std::size_t K, std::size_t stride) {
  std::vector<SlidingWindow> out;
  for (std::size_t s : window_starts(scene.frames.size(), K, stride)) out.push_back(window_at(scene, s, K));
  return out;
}

/// Keeps every `factor`-th frame (and matching GT), renumbering frames.
inline SceneDB downsample(const SceneDB& scene, int factor) {
  if (factor < 1) throw std::domain_error("downsample: factor must be >= 1");
  SceneDB out;
  out.scene_id = scene.scene_id;
  out.frequency_hz = scene.frequency_hz / factor;
  out.class_names = scene.class_names;
  for (std::size_t i = 0, k = 0; i < scene.frames.size(); i += static_cast<std::size_t>(factor), ++k) {
    DetectionFrame f = scene.frames[i];
    f.frame_idx = static_cast<int>(k);
    for (auto& b : f.boxes) b.frame_idx = f.frame_idx;
    out.frames.push_back(std::move(f));
    if (!scene.gt_boxes.empty()) {
      auto g = scene.gt_boxes[i];
      for (auto& b : g) b.frame_idx = static_cast<int>(k);
      out.gt_boxes.push_back(std::move(g));
    }
  }
  rebuild_gt_tracks(out);
  return out;
}

}  // namespace bott
