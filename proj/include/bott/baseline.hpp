#pragma once

// Reference tracker: the same gates and lifecycle as the learned tracker,
// with greedy nearest-neighbor association on center distance to each
// track's latest box.

#include <algorithm>
#include <stdexcept>
#include <tuple>
#include <vector>

#include "bott/gating.hpp"
#include "bott/online_tracker.hpp"

namespace bott {

/// Greedy matching of detections to track tails by ascending center
/// distance (ties by detection, then track index) over gated pairs.
inline Association greedy_nearest(const DetectionFrame& frame, const std::vector<Track>& tracks,
                                  const GateConfig& gate_cfg) {
  std::vector<std::tuple<double, int, int>> pairs;
  for (std::size_t d = 0; d < frame.boxes.size(); ++d)
    for (std::size_t t = 0; t < tracks.size(); ++t) {
      const Box3D& tail = tracks[t].tail();
      if (!gate(frame.boxes[d], tail, gate_cfg)) continue;
      pairs.emplace_back(center_distance(frame.boxes[d], tail), static_cast<int>(d), static_cast<int>(t));
    }
  std::sort(pairs.begin(), pairs.end());
  Association out;
  std::vector<char> det_used(frame.boxes.size(), 0), trk_used(tracks.size(), 0);
  for (const auto& [dist, d, t] : pairs) {
    if (det_used[static_cast<std::size_t>(d)] || trk_used[static_cast<std::size_t>(t)]) continue;
    det_used[static_cast<std::size_t>(d)] = trk_used[static_cast<std::size_t>(t)] = 1;
    out.matches.emplace_back(d, t);
  }
  std::sort(out.matches.begin(), out.matches.end());
  for (std::size_t d = 0; d < det_used.size(); ++d)
    if (!det_used[d]) out.unmatched_dets.push_back(static_cast<int>(d));
  for (std::size_t t = 0; t < trk_used.size(); ++t)
    if (!trk_used[t]) out.unmatched_tracks.push_back(static_cast<int>(t));
  return out;
}

class NearestNeighborTracker {
 public:
  explicit NearestNeighborTracker(OnlineConfig cfg) : cfg_(std::move(cfg)), manager_(cfg_.n_birth, cfg_.t_term) {
    cfg_.validate();
  }

  std::vector<TrackedBox> step(const DetectionFrame& frame) {
    if (has_last_ && !(frame.t > last_t_))
      throw std::domain_error("baseline tracker: frame " + std::to_string(frame.frame_idx) + " is out of order");
    has_last_ = true;
    last_t_ = frame.t;
    return manager_.update(frame, greedy_nearest(frame, manager_.live(), cfg_.gate));
  }

  const TrackManager& manager() const { return manager_; }

 private:
  OnlineConfig cfg_;
  TrackManager manager_;
  bool has_last_ = false;
  double last_t_ = 0;
};

}  // namespace bott
