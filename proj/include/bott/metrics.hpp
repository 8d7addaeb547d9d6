#pragma once

// CLEAR-MOT style evaluation with center-distance matching: MOTA, recall,
// identity switches, mismatch ratio and a score-swept average MOTA.

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "bott/geometry.hpp"
#include "bott/hungarian.hpp"
#include "bott/scene_io.hpp"
#include "bott/types.hpp"

namespace bott {

inline constexpr double kMatchRadius = 2.0;
inline constexpr int kSamotaThresholds = 40;

/// (pred index, gt index) pairs: per class, min-total-distance assignment
/// with pairs farther than `radius` rejected.
inline Assignment match_frame(const std::vector<Box3D>& preds, const std::vector<Box3D>& gts,
                              double radius = kMatchRadius) {
  std::map<int, std::vector<int>> pc, gc;
  for (std::size_t i = 0; i < preds.size(); ++i) pc[preds[i].class_id()].push_back(static_cast<int>(i));
  for (std::size_t j = 0; j < gts.size(); ++j) gc[gts[j].class_id()].push_back(static_cast<int>(j));
  Assignment out;
  for (const auto& [cls, pi] : pc) {
    auto it = gc.find(cls);
    if (it == gc.end()) continue;
    const auto& gj = it->second;
    Eigen::MatrixXd dist(static_cast<Eigen::Index>(pi.size()), static_cast<Eigen::Index>(gj.size()));
    for (std::size_t a = 0; a < pi.size(); ++a)
      for (std::size_t b = 0; b < gj.size(); ++b)
        dist(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b)) =
            center_distance(preds[static_cast<std::size_t>(pi[a])], gts[static_cast<std::size_t>(gj[b])]);
    // Out-of-radius pairs get a flat cost so they never displace a valid match.
    const Eigen::MatrixXd cost = (dist.array() > radius).select(radius * 1e3, dist);
    for (auto [a, b] : hungarian(cost))
      if (dist(a, b) <= radius) out.emplace_back(pi[static_cast<std::size_t>(a)], gj[static_cast<std::size_t>(b)]);
  }
  std::sort(out.begin(), out.end());
  return out;
}

struct MotCounts {
  long gt = 0;
  long matches = 0;
  long fp = 0;
  long fn = 0;
  long ids = 0;

  MotCounts& operator+=(const MotCounts& o) {
    gt += o.gt;
    matches += o.matches;
    fp += o.fp;
    fn += o.fn;
    ids += o.ids;
    return *this;
  }

  double mota() const { return gt > 0 ? 1.0 - static_cast<double>(fn + fp + ids) / static_cast<double>(gt) : 0.0; }
  double recall() const { return gt > 0 ? static_cast<double>(matches) / static_cast<double>(gt) : 0.0; }
  double mismatch_ratio() const { return matches > 0 ? static_cast<double>(ids) / static_cast<double>(matches) : 0.0; }

  bool operator==(const MotCounts&) const = default;
};

struct ClassResult {
  MotCounts counts;
  double samota = 0;
};

struct EvalResult {
  MotCounts counts;
  double samota = 0;
  std::map<std::string, ClassResult> per_class;

  double mota() const { return counts.mota(); }
  long ids() const { return counts.ids; }
};

inline nlohmann::json counts_to_json(const MotCounts& c, double samota) {
  return {{"mota", c.mota()},   {"recall", c.recall()}, {"ids", c.ids},
          {"fp", c.fp},         {"fn", c.fn},           {"gt", c.gt},
          {"matches", c.matches}, {"mismatch_ratio", c.mismatch_ratio()}, {"samota", samota}};
}

inline nlohmann::json to_json(const EvalResult& r) {
  nlohmann::json j = counts_to_json(r.counts, r.samota);
  j["per_class"] = nlohmann::json::object();
  for (const auto& [name, cr] : r.per_class) j["per_class"][name] = counts_to_json(cr.counts, cr.samota);
  return j;
}

/// Ground truth of one frame: gt_boxes when the scene carries them,
/// otherwise its labeled detections.
inline std::vector<Box3D> frame_ground_truth(const SceneDB& scene, std::size_t i) {
  if (!scene.gt_boxes.empty()) return scene.gt_boxes[i];
  std::vector<Box3D> out;
  for (const auto& b : scene.frames[i].boxes)
    if (b.gt_track_id) out.push_back(b);
  return out;
}

/// Per-class counts for one scene. Predictions with det_score < min_score
/// are ignored. IDS counts changes of the track id matched to a GT identity
/// between its consecutive matched frames.
inline std::vector<MotCounts> count_scene(const std::vector<TrackFrame>& pred, const SceneDB& scene,
                                          double min_score = -1.0, double radius = kMatchRadius) {
  const std::size_t C = scene.num_classes();
  std::vector<MotCounts> per_class(C);
  std::map<int, const TrackFrame*> pred_at;
  for (const auto& f : pred) pred_at[f.frame_idx] = &f;
  std::map<int, int> last_match;  // gt id -> pred track id
  for (std::size_t i = 0; i < scene.frames.size(); ++i) {
    const auto gts = frame_ground_truth(scene, i);
    std::vector<Box3D> pboxes;
    std::vector<int> pids;
    if (auto it = pred_at.find(scene.frames[i].frame_idx); it != pred_at.end())
      for (const auto& tb : it->second->tracks)
        if (tb.box.det_score >= min_score) {
          pboxes.push_back(tb.box);
          pids.push_back(tb.track_id);
        }
    const auto matches = match_frame(pboxes, gts, radius);
    std::vector<char> pm(pboxes.size(), 0), gm(gts.size(), 0);
    for (auto [p, g] : matches) {
      pm[static_cast<std::size_t>(p)] = gm[static_cast<std::size_t>(g)] = 1;
      const Box3D& gb = gts[static_cast<std::size_t>(g)];
      MotCounts& c = per_class.at(static_cast<std::size_t>(gb.class_id()));
      ++c.matches;
      if (!gb.gt_track_id) continue;
      const int pid = pids[static_cast<std::size_t>(p)];
      auto [it, fresh] = last_match.try_emplace(*gb.gt_track_id, pid);
      if (!fresh && it->second != pid) {
        ++c.ids;
        it->second = pid;
      }
    }
    for (std::size_t g = 0; g < gts.size(); ++g) {
      MotCounts& c = per_class.at(static_cast<std::size_t>(gts[g].class_id()));
      ++c.gt;
      if (!gm[g]) ++c.fn;
    }
    for (std::size_t p = 0; p < pboxes.size(); ++p)
      if (!pm[p]) ++per_class.at(static_cast<std::size_t>(pboxes[p].class_id())).fp;
  }
  return per_class;
}

struct SceneEval {
  const std::vector<TrackFrame>* pred;
  const SceneDB* scene;
};

/// Thresholds at the k/40 quantiles (k = 0..39) of the prediction scores.
inline std::vector<double> score_thresholds(const std::vector<SceneEval>& items) {
  std::vector<double> scores;
  for (const auto& it : items)
    for (const auto& f : *it.pred)
      for (const auto& tb : f.tracks) scores.push_back(tb.box.det_score);
  std::sort(scores.begin(), scores.end());
  std::vector<double> out;
  if (scores.empty()) return out;
  for (int k = 0; k < kSamotaThresholds; ++k) {
    const auto idx = static_cast<std::size_t>(std::floor(static_cast<double>(k) / kSamotaThresholds *
                                                          static_cast<double>(scores.size())));
    out.push_back(scores[std::min(idx, scores.size() - 1)]);
  }
  return out;
}

/// Evaluates several scenes sharing one class taxonomy.
inline EvalResult evaluate(const std::vector<SceneEval>& items, double radius = kMatchRadius) {
  if (items.empty()) throw std::domain_error("evaluate: nothing to evaluate");
  const auto& names = items.front().scene->class_names;
  const std::size_t C = names.size();
  auto total = [&](double min_score) {
    std::vector<MotCounts> acc(C);
    for (const auto& it : items) {
      if (it.scene->class_names != names) throw std::domain_error("evaluate: class taxonomies differ");
      const auto pc = count_scene(*it.pred, *it.scene, min_score, radius);
      for (std::size_t c = 0; c < C; ++c) acc[c] += pc[c];
    }
    return acc;
  };

  EvalResult r;
  const auto base = total(-1.0);
  for (std::size_t c = 0; c < C; ++c) {
    r.counts += base[c];
    r.per_class[names[c]].counts = base[c];
  }
  if (r.counts.gt == 0) throw std::domain_error("evaluate: no ground-truth boxes");

  const auto thresholds = score_thresholds(items);
  if (!thresholds.empty()) {
    std::vector<double> sum_class(C, 0.0);
    double sum = 0;
    for (double thr : thresholds) {
      const auto pc = total(thr);
      MotCounts all;
      for (std::size_t c = 0; c < C; ++c) {
        all += pc[c];
        sum_class[c] += std::max(0.0, pc[c].mota());
      }
      sum += std::max(0.0, all.mota());
    }
    const double n = static_cast<double>(thresholds.size());
    r.samota = sum / n;
    for (std::size_t c = 0; c < C; ++c) r.per_class[names[c]].samota = sum_class[c] / n;
  }
  return r;
}

inline EvalResult evaluate(const std::vector<TrackFrame>& pred, const SceneDB& scene, double radius = kMatchRadius) {
  return evaluate(std::vector<SceneEval>{{&pred, &scene}}, radius);
}

}  // namespace bott
