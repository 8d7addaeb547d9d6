#pragma once

// JSON Lines persistence for scene databases and tracker output.
//
// Scene file: line 1 is a header {scene_id, frequency_hz, class_names};
// each further line is one frame {frame_idx, t, boxes: [...], gt_boxes: [...]}.
// Box records are flat objects of the Box3D fields; gt_track_id = -1 marks
// an unlabeled or false-positive box.

#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "bott/types.hpp"

namespace bott {

using json = nlohmann::json;

/// Raised for malformed or inconsistent input files.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline json box_to_json(const Box3D& b) {
  json j;
  j["box_id"] = b.box_id;
  j["frame_idx"] = b.frame_idx;
  j["x"] = b.x;
  j["y"] = b.y;
  j["z"] = b.z;
  j["w"] = b.w;
  j["l"] = b.l;
  j["h"] = b.h;
  j["yaw"] = b.yaw;
  j["t"] = b.t;
  j["class_scores"] = b.class_scores;
  if (b.velocity)
    j["velocity"] = {(*b.velocity)[0], (*b.velocity)[1]};
  else
    j["velocity"] = nullptr;
  j["det_score"] = b.det_score;
  j["gt_track_id"] = b.gt_track_id.value_or(-1);
  if (b.interpolated) j["interpolated"] = true;
  return j;
}

inline Box3D box_from_json(const json& j) {
  Box3D b;
  b.box_id = j.at("box_id").get<int>();
  b.frame_idx = j.at("frame_idx").get<int>();
  b.x = j.at("x").get<double>();
  b.y = j.at("y").get<double>();
  b.z = j.at("z").get<double>();
  b.w = j.at("w").get<double>();
  b.l = j.at("l").get<double>();
  b.h = j.at("h").get<double>();
  b.yaw = j.at("yaw").get<double>();
  b.t = j.at("t").get<double>();
  b.class_scores = j.at("class_scores").get<std::vector<double>>();
  if (auto it = j.find("velocity"); it != j.end() && !it->is_null()) {
    const auto v = it->get<std::vector<double>>();
    if (v.size() != 2) throw DataError("velocity must have two components");
    b.velocity = std::array<double, 2>{v[0], v[1]};
  }
  b.det_score = j.value("det_score", 1.0);
  const int gid = j.value("gt_track_id", -1);
  if (gid >= 0) b.gt_track_id = gid;
  b.interpolated = j.value("interpolated", false);
  return b;
}

inline void write_scene(std::ostream& os, const SceneDB& db) {
  json header{{"scene_id", db.scene_id}, {"frequency_hz", db.frequency_hz}, {"class_names", db.class_names}};
  os << header.dump() << '\n';
  for (std::size_t i = 0; i < db.frames.size(); ++i) {
    const auto& f = db.frames[i];
    json rec{{"frame_idx", f.frame_idx}, {"t", f.t}};
    rec["boxes"] = json::array();
    for (const auto& b : f.boxes) rec["boxes"].push_back(box_to_json(b));
    if (!db.gt_boxes.empty()) {
      rec["gt_boxes"] = json::array();
      for (const auto& b : db.gt_boxes[i]) rec["gt_boxes"].push_back(box_to_json(b));
    }
    os << rec.dump() << '\n';
  }
}

inline SceneDB read_scene(std::istream& is, const std::string& origin = "<stream>") {
  SceneDB db;
  std::string line;
  std::size_t lineno = 0;
  bool have_header = false;
  bool any_gt = false;
  try {
    while (std::getline(is, line)) {
      ++lineno;
      if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
      const json rec = json::parse(line);
      if (!have_header) {
        db.scene_id = rec.at("scene_id").get<std::string>();
        db.frequency_hz = rec.at("frequency_hz").get<double>();
        db.class_names = rec.at("class_names").get<std::vector<std::string>>();
        have_header = true;
        continue;
      }
      DetectionFrame f;
      f.frame_idx = rec.at("frame_idx").get<int>();
      f.t = rec.at("t").get<double>();
      for (const auto& jb : rec.at("boxes")) f.boxes.push_back(box_from_json(jb));
      std::vector<Box3D> gts;
      if (auto it = rec.find("gt_boxes"); it != rec.end()) {
        any_gt = true;
        for (const auto& jb : *it) gts.push_back(box_from_json(jb));
      }
      db.frames.push_back(std::move(f));
      db.gt_boxes.push_back(std::move(gts));
    }
  } catch (const json::exception& e) {
    throw DataError(origin + ":" + std::to_string(lineno) + ": " + e.what());
  }
  if (!have_header) throw DataError(origin + ": missing scene header");
  if (!any_gt) db.gt_boxes.clear();
  rebuild_gt_tracks(db);
  try {
    validate(db);
  } catch (const std::domain_error& e) {
    throw DataError(origin + ": " + e.what());
  }
  return db;
}

inline void save_scene(const std::filesystem::path& path, const SceneDB& db) {
  std::ofstream os(path);
  if (!os) throw DataError("cannot write " + path.string());
  write_scene(os, db);
}

inline SceneDB load_scene(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw DataError("cannot read " + path.string());
  return read_scene(is, path.string());
}

/// Loads every `*.jsonl` scene in a directory, sorted by file name.
inline std::vector<SceneDB> load_scene_dir(const std::filesystem::path& dir) {
  if (std::filesystem::is_regular_file(dir)) return {load_scene(dir)};
  if (!std::filesystem::is_directory(dir)) throw DataError("no such scene directory: " + dir.string());
  std::vector<std::filesystem::path> files;
  for (const auto& e : std::filesystem::directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == ".jsonl") files.push_back(e.path());
  std::sort(files.begin(), files.end());
  std::vector<SceneDB> out;
  out.reserve(files.size());
  for (const auto& f : files) out.push_back(load_scene(f));
  return out;
}

// ---------------------------------------------------------------------------
// Tracker output

struct TrackedBox {
  int track_id = 0;
  Box3D box;
};

struct TrackFrame {
  int frame_idx = 0;
  double t = 0;
  std::vector<TrackedBox> tracks;
};

inline void write_track_frames(std::ostream& os, const std::vector<TrackFrame>& frames) {
  for (const auto& f : frames) {
    json rec{{"frame_idx", f.frame_idx}, {"t", f.t}};
    rec["tracks"] = json::array();
    for (const auto& tb : f.tracks) {
      json jb = box_to_json(tb.box);
      jb["track_id"] = tb.track_id;
      rec["tracks"].push_back(std::move(jb));
    }
    os << rec.dump() << '\n';
  }
}

inline std::vector<TrackFrame> read_track_frames(std::istream& is, const std::string& origin = "<stream>") {
  std::vector<TrackFrame> out;
  std::string line;
  std::size_t lineno = 0;
  try {
    while (std::getline(is, line)) {
      ++lineno;
      if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
      const json rec = json::parse(line);
      TrackFrame f;
      f.frame_idx = rec.at("frame_idx").get<int>();
      f.t = rec.at("t").get<double>();
      for (const auto& jb : rec.at("tracks")) f.tracks.push_back({jb.at("track_id").get<int>(), box_from_json(jb)});
      out.push_back(std::move(f));
    }
  } catch (const json::exception& e) {
    throw DataError(origin + ":" + std::to_string(lineno) + ": " + e.what());
  }
  return out;
}

inline void save_track_frames(const std::filesystem::path& path, const std::vector<TrackFrame>& frames) {
  std::ofstream os(path);
  if (!os) throw DataError("cannot write " + path.string());
  write_track_frames(os, frames);
}

inline std::vector<TrackFrame> load_track_frames(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw DataError("cannot read " + path.string());
  return read_track_frames(is, path.string());
}

/// Lays tracks out frame by frame over the given frame grid.
inline std::vector<TrackFrame> tracks_to_frames(const std::vector<Track>& tracks,
                                                const std::vector<DetectionFrame>& grid) {
  std::map<int, std::size_t> slot;
  std::vector<TrackFrame> out(grid.size());
  for (std::size_t i = 0; i < grid.size(); ++i) {
    out[i].frame_idx = grid[i].frame_idx;
    out[i].t = grid[i].t;
    slot[grid[i].frame_idx] = i;
  }
  for (const auto& tr : tracks)
    for (const auto& b : tr.boxes()) {
      auto it = slot.find(b.frame_idx);
      if (it != slot.end()) out[it->second].tracks.push_back({tr.id(), b});
    }
  for (auto& f : out)
    std::sort(f.tracks.begin(), f.tracks.end(),
              [](const TrackedBox& a, const TrackedBox& b) { return a.track_id < b.track_id; });
  return out;
}

}  // namespace bott
