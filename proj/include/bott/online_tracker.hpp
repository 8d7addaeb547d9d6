#pragma once

// Frame-by-frame tracking from windowed linking scores: gating, per-track
// max affinity, Hungarian association and track lifecycle management.

#include <Eigen/Core>
#include <algorithm>
#include <deque>
#include <map>
#include <stdexcept>
#include <utility>
#include <vector>

#include "bott/config_json.hpp"
#include "bott/gating.hpp"
#include "bott/hungarian.hpp"
#include "bott/network.hpp"
#include "bott/scene_io.hpp"
#include "bott/types.hpp"

namespace bott {

struct OnlineConfig {
  std::size_t K = 16;
  int n_birth = 1;
  double t_term = 2.0;  // seconds
  GateConfig gate;

  void validate() const {
    if (K < 1) throw ConfigError("online: K must be >= 1");
    if (n_birth < 1) throw ConfigError("online: n_birth must be >= 1");
    if (!(t_term > 0)) throw ConfigError("online: t_term must be positive");
    gate.validate();
  }
};

/// Tracker settings with per-class defaults for `class_names`.
inline OnlineConfig make_online_config(const std::vector<std::string>& class_names, std::size_t K = 16,
                                       const std::map<std::string, ClassLimits>& overrides = {}) {
  OnlineConfig c;
  c.K = K;
  c.gate = make_gate_config(class_names, overrides);
  return c;
}

/// (frame_idx, box_id) identifies a detection within a scene.
using BoxKey = std::pair<int, int>;

inline BoxKey key_of(const Box3D& b) { return {b.frame_idx, b.box_id}; }

/// Index of the first row belonging to the window's last frame.
inline std::size_t current_frame_offset(const SlidingWindow& w) { return w.N() - w.frames.back().boxes.size(); }

/// AS (detections x tracks): the max gated linking score between each
/// current-frame detection and the track's boxes in earlier window frames.
template <typename TrackRange>
Eigen::MatrixXd affinity(const LinkScoreMatrix& ls, const SlidingWindow& window, const TrackRange& tracks,
                         const GateConfig& gate_cfg) {
  const auto rows = window.rows();
  if (ls.rows() != static_cast<Eigen::Index>(rows.size()) || ls.cols() != ls.rows())
    throw std::domain_error("affinity: score matrix does not match the window");
  const std::size_t cur = current_frame_offset(window);
  const int cur_frame = window.frames.back().frame_idx;
  std::map<BoxKey, std::size_t> row_of;
  for (std::size_t r = 0; r < cur; ++r) row_of[key_of(*rows[r])] = r;

  const std::size_t D = rows.size() - cur;
  Eigen::MatrixXd as = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(D), static_cast<Eigen::Index>(tracks.size()));
  std::size_t j = 0;
  for (const Track& tr : tracks) {
    for (const Box3D& hb : tr.boxes()) {
      if (hb.frame_idx == cur_frame) continue;
      auto it = row_of.find(key_of(hb));
      if (it == row_of.end()) continue;
      const Box3D& hist = *rows[it->second];
      for (std::size_t d = 0; d < D; ++d) {
        const Box3D& det = *rows[cur + d];
        if (!gate(det, hist, gate_cfg)) continue;
        double& cell = as(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(j));
        cell = std::max(cell, ls(static_cast<Eigen::Index>(cur + d), static_cast<Eigen::Index>(it->second)));
      }
    }
    ++j;
  }
  return as;
}

struct Association {
  Assignment matches;  // (detection, track)
  std::vector<int> unmatched_dets;
  std::vector<int> unmatched_tracks;
};

/// Hungarian on 1 - AS; pairs scoring below their class threshold are
/// released afterwards.
inline Association associate(const Eigen::MatrixXd& as, const std::vector<const Box3D*>& dets,
                             const GateConfig& gate_cfg) {
  Association out;
  std::vector<char> det_used(static_cast<std::size_t>(as.rows()), 0), trk_used(static_cast<std::size_t>(as.cols()), 0);
  if (as.rows() > 0 && as.cols() > 0) {
    const Eigen::MatrixXd cost = (1.0 - as.array()).matrix();
    for (auto [d, t] : hungarian(cost)) {
      const double thr = gate_cfg.limits(dets[static_cast<std::size_t>(d)]->class_id()).min_link_score;
      if (as(d, t) <= 0 || as(d, t) < thr) continue;
      out.matches.emplace_back(d, t);
      det_used[static_cast<std::size_t>(d)] = 1;
      trk_used[static_cast<std::size_t>(t)] = 1;
    }
  }
  for (std::size_t d = 0; d < det_used.size(); ++d)
    if (!det_used[d]) out.unmatched_dets.push_back(static_cast<int>(d));
  for (std::size_t t = 0; t < trk_used.size(); ++t)
    if (!trk_used[t]) out.unmatched_tracks.push_back(static_cast<int>(t));
  return out;
}

/// Birth, confirmation, termination and publication of tracks.
class TrackManager {
 public:
  TrackManager(int n_birth, double t_term) : n_birth_(n_birth), t_term_(t_term) {}

  const std::vector<Track>& live() const { return live_; }
  const std::vector<Track>& finished() const { return finished_; }

  /// Applies one frame's association result and returns the published boxes.
  std::vector<TrackedBox> update(const DetectionFrame& frame, const Association& assoc) {
    for (auto [d, t] : assoc.matches) live_[static_cast<std::size_t>(t)].add(frame.boxes[static_cast<std::size_t>(d)]);
    for (int d : assoc.unmatched_dets) {
      const Box3D& b = frame.boxes[static_cast<std::size_t>(d)];
      Track tr(next_id_++, b.class_id());
      tr.add(b);
      live_.push_back(std::move(tr));
    }
    for (Track& tr : live_)
      if (tr.status() == TrackStatus::unconfirmed && static_cast<int>(tr.size()) >= n_birth_)
        tr.set_status(TrackStatus::confirmed);
    std::vector<Track> keep;
    for (Track& tr : live_) {
      if (frame.t - tr.last_update_t() > t_term_) {
        tr.set_status(TrackStatus::terminated);
        finished_.push_back(std::move(tr));
      } else {
        keep.push_back(std::move(tr));
      }
    }
    live_ = std::move(keep);

    std::vector<TrackedBox> out;
    for (const Track& tr : live_)
      if (tr.status() == TrackStatus::confirmed && tr.tail().frame_idx == frame.frame_idx)
        out.push_back({tr.id(), tr.tail()});
    std::sort(out.begin(), out.end(), [](const TrackedBox& a, const TrackedBox& b) { return a.track_id < b.track_id; });
    return out;
  }

  /// Live and finished tracks together, ordered by id.
  std::vector<Track> all_tracks() const {
    std::vector<Track> out = finished_;
    out.insert(out.end(), live_.begin(), live_.end());
    std::sort(out.begin(), out.end(), [](const Track& a, const Track& b) { return a.id() < b.id(); });
    return out;
  }

 private:
  int n_birth_;
  double t_term_;
  int next_id_ = 0;
  std::vector<Track> live_;
  std::vector<Track> finished_;
};

class OnlineTracker {
 public:
  OnlineTracker(OnlineConfig cfg, LinkScorer scorer)
      : cfg_(std::move(cfg)), scorer_(std::move(scorer)), manager_(cfg_.n_birth, cfg_.t_term) {
    cfg_.validate();
  }

  std::vector<TrackedBox> step(const DetectionFrame& frame) {
    if (!buffer_.empty() && !(frame.t > buffer_.back().t))
      throw std::domain_error("online tracker: frame " + std::to_string(frame.frame_idx) + " is out of order");
    buffer_.push_back(frame);
    while (buffer_.size() > cfg_.K) buffer_.pop_front();

    Association assoc;
    if (!frame.boxes.empty()) {
      SlidingWindow window;
      window.frames.assign(buffer_.begin(), buffer_.end());
      const LinkScoreMatrix ls = scorer_(window);
      ++forward_calls_;
      const Eigen::MatrixXd as = affinity(ls, window, manager_.live(), cfg_.gate);
      const auto rows = window.rows();
      const std::vector<const Box3D*> dets(rows.begin() + static_cast<std::ptrdiff_t>(current_frame_offset(window)),
                                           rows.end());
      assoc = associate(as, dets, cfg_.gate);
    }
    return manager_.update(frame, assoc);
  }

  std::size_t forward_calls() const { return forward_calls_; }
  const TrackManager& manager() const { return manager_; }
  const OnlineConfig& config() const { return cfg_; }

 private:
  OnlineConfig cfg_;
  LinkScorer scorer_;
  TrackManager manager_;
  std::deque<DetectionFrame> buffer_;
  std::size_t forward_calls_ = 0;
};

/// Feeds every frame of a scene through `tracker` and collects its output.
template <typename Tracker>
std::vector<TrackFrame> run_tracker(Tracker& tracker, const SceneDB& scene) {
  std::vector<TrackFrame> out;
  out.reserve(scene.frames.size());
  for (const auto& f : scene.frames) out.push_back({f.frame_idx, f.t, tracker.step(f)});
  return out;
}

}  // namespace bott
