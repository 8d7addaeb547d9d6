#pragma once

// Domain types shared by every stage of the tracker: boxes, frames,
// sliding windows, tracks and per-scene databases.

#include <algorithm>
#include <array>
#include <cassert>
#include <cmath>
#include <cstddef>
#include <iterator>
#include <limits>
#include <numbers>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace bott {

/// Wrap an angle into (-pi, pi].
inline double wrap_angle(double a) {
  constexpr double two_pi = 2.0 * std::numbers::pi;
  a = std::fmod(a, two_pi);
  if (a <= -std::numbers::pi) a += two_pi;
  if (a > std::numbers::pi) a -= two_pi;
  return a;
}

struct Box3D {
  double x = 0, y = 0, z = 0;
  double w = 1, l = 1, h = 1;
  double yaw = 0;
  double t = 0;
  int frame_idx = 0;
  std::vector<double> class_scores;
  std::optional<std::array<double, 2>> velocity;
  double det_score = 1.0;
  // Absent for false positives and unlabeled detections.
  std::optional<int> gt_track_id;
  int box_id = 0;
  // Set on boxes synthesized by gap filling.
  bool interpolated = false;

  /// Index of the largest class score (lowest index on ties).
  int class_id() const {
    if (class_scores.empty()) return -1;
    return static_cast<int>(std::max_element(class_scores.begin(), class_scores.end()) -
                            class_scores.begin());
  }

  bool is_false_positive() const { return !gt_track_id.has_value(); }

  bool operator==(const Box3D&) const = default;
};

/// Throws std::domain_error if the box breaks a Box3D invariant.
inline void validate(const Box3D& b, std::size_t num_classes) {
  if (!(b.w > 0 && b.l > 0 && b.h > 0))
    throw std::domain_error("box " + std::to_string(b.box_id) + ": size must be positive");
  if (!(b.yaw > -std::numbers::pi && b.yaw <= std::numbers::pi))
    throw std::domain_error("box " + std::to_string(b.box_id) + ": yaw outside (-pi, pi]");
  if (b.class_scores.size() != num_classes)
    throw std::domain_error("box " + std::to_string(b.box_id) + ": expected " +
                            std::to_string(num_classes) + " class scores");
  for (double c : b.class_scores)
    if (!(c >= 0)) throw std::domain_error("box " + std::to_string(b.box_id) + ": negative class score");
  if (b.gt_track_id && *b.gt_track_id < 0)
    throw std::domain_error("box " + std::to_string(b.box_id) + ": negative gt_track_id");
}

/// One-hot class scores scaled by the detection score.
inline std::vector<double> one_hot_scores(int class_id, std::size_t num_classes, double score = 1.0) {
  std::vector<double> s(num_classes, 0.0);
  s.at(static_cast<std::size_t>(class_id)) = score;
  return s;
}

struct DetectionFrame {
  int frame_idx = 0;
  double t = 0;
  std::vector<Box3D> boxes;

  bool operator==(const DetectionFrame&) const = default;
};

inline void validate(const DetectionFrame& f) {
  std::vector<int> ids;
  ids.reserve(f.boxes.size());
  for (const auto& b : f.boxes) {
    if (b.frame_idx != f.frame_idx || b.t != f.t)
      throw std::domain_error("frame " + std::to_string(f.frame_idx) + ": box with foreign frame/time");
    ids.push_back(b.box_id);
  }
  std::sort(ids.begin(), ids.end());
  if (std::adjacent_find(ids.begin(), ids.end()) != ids.end())
    throw std::domain_error("frame " + std::to_string(f.frame_idx) + ": duplicate box_id");
}

/// All boxes from K consecutive frames; rows of the network input are
/// ordered frame by frame, then by position inside the frame.
struct SlidingWindow {
  std::vector<DetectionFrame> frames;

  std::size_t K() const { return frames.size(); }

  std::size_t N() const {
    std::size_t n = 0;
    for (const auto& f : frames) n += f.boxes.size();
    return n;
  }

  /// Row-ordered view of every box in the window.
  std::vector<const Box3D*> rows() const {
    std::vector<const Box3D*> out;
    out.reserve(N());
    for (const auto& f : frames)
      for (const auto& b : f.boxes) out.push_back(&b);
    return out;
  }
};

inline void validate(const SlidingWindow& w) {
  for (std::size_t i = 1; i < w.frames.size(); ++i)
    if (!(w.frames[i].t > w.frames[i - 1].t))
      throw std::domain_error("sliding window frames must be strictly increasing in time");
}

enum class TrackStatus { unconfirmed, confirmed, terminated };

inline const char* to_string(TrackStatus s) {
  switch (s) {
    case TrackStatus::unconfirmed: return "unconfirmed";
    case TrackStatus::confirmed: return "confirmed";
    case TrackStatus::terminated: return "terminated";
  }
  return "?";
}

class Track {
 public:
  Track() = default;
  Track(int id, int class_id) : id_(id), class_id_(class_id) {}

  int id() const { return id_; }
  int class_id() const { return class_id_; }
  TrackStatus status() const { return status_; }
  double last_update_t() const { return last_update_t_; }
  const std::vector<Box3D>& boxes() const { return boxes_; }
  const Box3D& tail() const { return boxes_.back(); }
  bool empty() const { return boxes_.empty(); }
  std::size_t size() const { return boxes_.size(); }

  /// Inserts a box keeping time order; a second box for an already
  /// occupied frame is rejected.
  void add(const Box3D& b) {
    auto pos = std::lower_bound(boxes_.begin(), boxes_.end(), b,
                                [](const Box3D& a, const Box3D& c) { return a.t < c.t; });
    if ((pos != boxes_.end() && pos->frame_idx == b.frame_idx) ||
        (pos != boxes_.begin() && std::prev(pos)->frame_idx == b.frame_idx))
      throw std::domain_error("track " + std::to_string(id_) + " already holds a box in frame " +
                              std::to_string(b.frame_idx));
    boxes_.insert(pos, b);
    last_update_t_ = std::max(last_update_t_, b.t);
    check_invariants();
  }

  void set_status(TrackStatus next) {
    const bool ok = next == status_ ||
                    (status_ == TrackStatus::unconfirmed && next != TrackStatus::unconfirmed) ||
                    (status_ == TrackStatus::confirmed && next == TrackStatus::terminated);
    if (!ok)
      throw std::logic_error(std::string("illegal track transition ") + to_string(status_) + " -> " +
                             to_string(next));
    status_ = next;
  }

  void set_id(int id) { id_ = id; }

  bool is_sorted() const {
    for (std::size_t i = 1; i < boxes_.size(); ++i)
      if (!(boxes_[i - 1].t < boxes_[i].t) || boxes_[i - 1].frame_idx == boxes_[i].frame_idx)
        return false;
    return true;
  }

  // Debug hook; compiled out with NDEBUG.
  void check_invariants() const { assert(is_sorted()); }

 private:
  int id_ = 0;
  int class_id_ = 0;
  TrackStatus status_ = TrackStatus::unconfirmed;
  double last_update_t_ = -std::numeric_limits<double>::infinity();
  std::vector<Box3D> boxes_;
};

struct SceneDB {
  std::string scene_id;
  double frequency_hz = 10.0;
  std::vector<std::string> class_names;
  std::vector<DetectionFrame> frames;
  // Ground-truth boxes per frame, aligned with `frames` (may be empty when
  // the scene carries only detection labels).
  std::vector<std::vector<Box3D>> gt_boxes;
  std::vector<Track> gt_tracks;

  std::size_t num_classes() const { return class_names.size(); }
};

/// Groups labeled boxes into time-ordered tracks keyed by gt_track_id.
inline std::vector<Track> tracks_from_labels(const std::vector<std::vector<Box3D>>& per_frame) {
  std::vector<Track> tracks;
  std::vector<std::pair<int, std::size_t>> index;  // gt id -> slot
  for (const auto& frame : per_frame) {
    for (const auto& b : frame) {
      if (!b.gt_track_id) continue;
      auto it = std::find_if(index.begin(), index.end(),
                             [&](const auto& p) { return p.first == *b.gt_track_id; });
      std::size_t slot;
      if (it == index.end()) {
        slot = tracks.size();
        index.emplace_back(*b.gt_track_id, slot);
        tracks.emplace_back(*b.gt_track_id, b.class_id());
        tracks.back().set_status(TrackStatus::confirmed);
      } else {
        slot = it->second;
      }
      tracks[slot].add(b);
    }
  }
  std::sort(tracks.begin(), tracks.end(), [](const Track& a, const Track& b) { return a.id() < b.id(); });
  return tracks;
}

/// Rebuilds gt_tracks from gt_boxes when present, otherwise from the
/// labels carried by detections.
inline void rebuild_gt_tracks(SceneDB& db) {
  if (!db.gt_boxes.empty()) {
    db.gt_tracks = tracks_from_labels(db.gt_boxes);
    return;
  }
  std::vector<std::vector<Box3D>> per_frame;
  per_frame.reserve(db.frames.size());
  for (const auto& f : db.frames) per_frame.push_back(f.boxes);
  db.gt_tracks = tracks_from_labels(per_frame);
}

inline void validate(const SceneDB& db) {
  const std::size_t C = db.num_classes();
  if (C == 0) throw std::domain_error("scene " + db.scene_id + ": empty class taxonomy");
  if (!(db.frequency_hz > 0)) throw std::domain_error("scene " + db.scene_id + ": frequency must be positive");
  const double period = 1.0 / db.frequency_hz;
  for (std::size_t i = 0; i < db.frames.size(); ++i) {
    validate(db.frames[i]);
    for (const auto& b : db.frames[i].boxes) validate(b, C);
    if (i > 0) {
      const double dt = db.frames[i].t - db.frames[i - 1].t;
      if (std::abs(dt - period) > 0.01 * period)
        throw std::domain_error("scene " + db.scene_id + ": frames not evenly spaced at " +
                                std::to_string(db.frequency_hz) + " Hz");
    }
  }
  if (!db.gt_boxes.empty() && db.gt_boxes.size() != db.frames.size())
    throw std::domain_error("scene " + db.scene_id + ": gt_boxes not aligned with frames");
  for (const auto& f : db.frames)
    for (const auto& b : f.boxes) {
      if (!b.gt_track_id) continue;
      const bool known = std::any_of(db.gt_tracks.begin(), db.gt_tracks.end(),
                                     [&](const Track& t) { return t.id() == *b.gt_track_id; });
      if (!known)
        throw std::domain_error("scene " + db.scene_id + ": detection references unknown gt track " +
                                std::to_string(*b.gt_track_id));
    }
}

}  // namespace bott
