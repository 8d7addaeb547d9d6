#pragma once

// Scene-level tracking: max-aggregated links over every window, per-class
// thresholds, greedy link suppression, consistent track construction and
// gap interpolation.

#include <algorithm>
#include <map>
#include <numeric>
#include <set>
#include <stdexcept>
#include <vector>

#include "bott/gating.hpp"
#include "bott/network.hpp"
#include "bott/online_tracker.hpp"
#include "bott/parallel.hpp"
#include "bott/trackdb.hpp"
#include "bott/types.hpp"

namespace bott {

struct LinkCandidate {
  BoxKey a;  // earlier box
  BoxKey b;  // later box
  double score = 0;
  int class_id = 0;

  bool operator==(const LinkCandidate&) const = default;
};

struct OfflineConfig {
  std::size_t K = 16;
  GateConfig gate;
  // Per-class link thresholds; empty means the gate's min_link_score.
  std::vector<double> thresholds;
  bool interpolate = true;

  double threshold(int class_id) const {
    if (thresholds.empty()) return gate.limits(class_id).min_link_score;
    return thresholds.at(static_cast<std::size_t>(class_id));
  }
};

inline OfflineConfig make_offline_config(const std::vector<std::string>& class_names, std::size_t K = 16,
                                         const std::map<std::string, ClassLimits>& overrides = {}) {
  OfflineConfig c;
  c.K = K;
  c.gate = make_gate_config(class_names, overrides);
  return c;
}

/// Max linking score of every gated box pair that shares at least one
/// stride-1 window. A scene shorter than K is scored as a single window.
/// Windows are evaluated in parallel; `scorer` must be thread-safe.
inline std::vector<LinkCandidate> aggregate_links(const SceneDB& scene, const LinkScorer& scorer, std::size_t K,
                                                  const GateConfig& gate_cfg) {
  if (scene.frames.empty()) return {};
  const std::size_t k = std::min(K, scene.frames.size());
  const auto starts = window_starts(scene.frames.size(), k, 1);
  std::vector<LinkScoreMatrix> scores(starts.size());
  parallel_for(starts.size(), [&](std::size_t i) {
    const SlidingWindow w = window_at(scene, starts[i], k);
    if (w.N() > 0) scores[i] = scorer(w);
  });

  std::map<std::pair<BoxKey, BoxKey>, LinkCandidate> best;
  for (std::size_t i = 0; i < starts.size(); ++i) {
    if (scores[i].size() == 0) continue;
    const SlidingWindow w = window_at(scene, starts[i], k);
    const auto rows = w.rows();
    for (std::size_t r = 0; r < rows.size(); ++r)
      for (std::size_t c = r + 1; c < rows.size(); ++c) {
        const Box3D &p = *rows[r], &q = *rows[c];
        if (p.frame_idx == q.frame_idx || !gate(p, q, gate_cfg)) continue;
        const bool p_first = p.t < q.t;
        const BoxKey a = key_of(p_first ? p : q), b = key_of(p_first ? q : p);
        const double s = scores[i](static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
        auto [it, inserted] = best.try_emplace({a, b}, LinkCandidate{a, b, s, p.class_id()});
        if (!inserted) it->second.score = std::max(it->second.score, s);
      }
  }
  std::vector<LinkCandidate> out;
  out.reserve(best.size());
  for (auto& [key, cand] : best) out.push_back(cand);
  return out;
}

/// Drops candidates under their class threshold, then accepts links by
/// descending score (ties: lower box pair first). Accepting a--b between
/// frames fa and fb rejects every other link from a into fb and from b
/// into fa. Returns accepted links in acceptance order.
inline std::vector<LinkCandidate> select_links(std::vector<LinkCandidate> cands, const OfflineConfig& cfg) {
  std::erase_if(cands, [&](const LinkCandidate& c) { return c.score < cfg.threshold(c.class_id); });
  std::sort(cands.begin(), cands.end(), [](const LinkCandidate& x, const LinkCandidate& y) {
    if (x.score != y.score) return x.score > y.score;
    return std::tie(x.a, x.b) < std::tie(y.a, y.b);
  });
  std::set<std::pair<BoxKey, int>> used;  // (box, other frame)
  std::vector<LinkCandidate> out;
  for (const auto& c : cands) {
    if (used.count({c.a, c.b.first}) || used.count({c.b, c.a.first})) continue;
    used.insert({c.a, c.b.first});
    used.insert({c.b, c.a.first});
    out.push_back(c);
  }
  return out;
}

/// Unions boxes along links in the given order, skipping any merge that
/// would place two boxes in one frame. Every real box ends up in exactly one
/// track; ids follow the (frame, box) order of each track's first box.
inline std::vector<Track> build_tracks(const std::vector<LinkCandidate>& links, const SceneDB& scene) {
  std::map<BoxKey, std::size_t> index;
  std::vector<const Box3D*> boxes;
  for (const auto& f : scene.frames)
    for (const auto& b : f.boxes) {
      index[key_of(b)] = boxes.size();
      boxes.push_back(&b);
    }
  std::vector<std::size_t> parent(boxes.size());
  std::iota(parent.begin(), parent.end(), 0);
  std::vector<std::set<int>> frames(boxes.size());
  for (std::size_t i = 0; i < boxes.size(); ++i) frames[i].insert(boxes[i]->frame_idx);
  auto find = [&](std::size_t x) {
    while (parent[x] != x) x = parent[x] = parent[parent[x]];
    return x;
  };
  for (const auto& l : links) {
    auto ia = index.find(l.a), ib = index.find(l.b);
    if (ia == index.end() || ib == index.end()) throw std::domain_error("build_tracks: link to an unknown box");
    std::size_t ra = find(ia->second), rb = find(ib->second);
    if (ra == rb) continue;
    const bool clash = std::any_of(frames[rb].begin(), frames[rb].end(), [&](int f) { return frames[ra].count(f); });
    if (clash) continue;
    if (frames[ra].size() < frames[rb].size()) std::swap(ra, rb);
    parent[rb] = ra;
    frames[ra].insert(frames[rb].begin(), frames[rb].end());
    frames[rb].clear();
  }
  std::map<std::size_t, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < boxes.size(); ++i) groups[find(i)].push_back(i);
  std::vector<std::vector<std::size_t>> ordered;
  for (auto& [root, members] : groups) ordered.push_back(std::move(members));
  std::sort(ordered.begin(), ordered.end(), [](const auto& x, const auto& y) { return x.front() < y.front(); });

  std::vector<Track> out;
  for (const auto& members : ordered) {
    Track tr(static_cast<int>(out.size()), boxes[members.front()]->class_id());
    for (std::size_t m : members) tr.add(*boxes[m]);
    tr.set_status(TrackStatus::confirmed);
    out.push_back(std::move(tr));
  }
  return out;
}

/// Fills every missing frame between consecutive boxes of a track with a
/// linearly interpolated box flagged `interpolated`.
inline std::vector<Track> interpolate_tracks(const std::vector<Track>& tracks, const std::vector<DetectionFrame>& grid) {
  std::map<int, double> time_of;
  for (const auto& f : grid) time_of[f.frame_idx] = f.t;
  std::vector<Track> out;
  out.reserve(tracks.size());
  for (const Track& tr : tracks) {
    Track nt(tr.id(), tr.class_id());
    nt.set_status(tr.status());
    const auto& bx = tr.boxes();
    for (std::size_t i = 0; i < bx.size(); ++i) {
      nt.add(bx[i]);
      if (i + 1 == bx.size()) continue;
      for (int f = bx[i].frame_idx + 1; f < bx[i + 1].frame_idx; ++f) {
        auto it = time_of.find(f);
        if (it == time_of.end()) throw std::domain_error("interpolate_tracks: frame missing from grid");
        Box3D nb = lerp_box(bx[i], bx[i + 1], it->second);
        nb.frame_idx = f;
        nb.box_id = -1;
        nt.add(nb);
      }
    }
    out.push_back(std::move(nt));
  }
  return out;
}

/// Full offline pipeline for one scene.
inline std::vector<Track> track_offline(const SceneDB& scene, const LinkScorer& scorer, const OfflineConfig& cfg) {
  auto links = select_links(aggregate_links(scene, scorer, cfg.K, cfg.gate), cfg);
  auto tracks = build_tracks(links, scene);
  return cfg.interpolate ? interpolate_tracks(tracks, scene.frames) : tracks;
}

}  // namespace bott
