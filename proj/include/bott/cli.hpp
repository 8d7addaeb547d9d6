#pragma once

// Command-line front end: synth, gen-db, train, track, eval and bench.
// Exit codes: 0 success, 1 usage or configuration error, 2 data error.

#include <zlib.h>

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "bott/baseline.hpp"
#include "bott/config_json.hpp"
#include "bott/metrics.hpp"
#include "bott/network.hpp"
#include "bott/offline_tracker.hpp"
#include "bott/online_tracker.hpp"
#include "bott/scene_io.hpp"
#include "bott/synth.hpp"
#include "bott/trackdb.hpp"
#include "bott/trainer.hpp"

namespace bott {

struct TrackerSettings {
  int n_birth = 1;
  double t_term = 2.0;
  double static_speed_thresh = 0.5;
  double static_max_dist = 2.0;
  std::string distance_rule = "floor";
  std::map<std::string, ClassLimits> classes;        // overrides by class name
  std::map<std::string, double> offline_thresholds;  // by class name
  bool interpolate = true;

  GateConfig gate_for(const std::vector<std::string>& names) const {
    GateConfig g = make_gate_config(names, classes);
    g.static_speed_thresh = static_speed_thresh;
    g.static_max_dist = static_max_dist;
    if (distance_rule == "floor")
      g.distance_rule = DistanceRule::floor;
    else if (distance_rule == "cap")
      g.distance_rule = DistanceRule::cap;
    else
      throw ConfigError("tracker: distance_rule must be 'floor' or 'cap'");
    g.validate();
    return g;
  }

  OnlineConfig online(const std::vector<std::string>& names, std::size_t K) const {
    OnlineConfig c;
    c.K = K;
    c.n_birth = n_birth;
    c.t_term = t_term;
    c.gate = gate_for(names);
    c.validate();
    return c;
  }

  OfflineConfig offline(const std::vector<std::string>& names, std::size_t K) const {
    OfflineConfig c;
    c.K = K;
    c.gate = gate_for(names);
    c.interpolate = interpolate;
    if (!offline_thresholds.empty())
      for (const auto& n : names) {
        auto it = offline_thresholds.find(n);
        c.thresholds.push_back(it == offline_thresholds.end() ? c.gate.limits(static_cast<int>(c.thresholds.size())).min_link_score
                                                              : it->second);
      }
    return c;
  }
};

inline void to_json(nlohmann::json& j, const TrackerSettings& s) {
  j = {{"n_birth", s.n_birth},
       {"t_term", s.t_term},
       {"static_speed_thresh", s.static_speed_thresh},
       {"static_max_dist", s.static_max_dist},
       {"distance_rule", s.distance_rule},
       {"classes", s.classes},
       {"offline_thresholds", s.offline_thresholds},
       {"interpolate", s.interpolate}};
}

inline void from_json(const nlohmann::json& j, TrackerSettings& s) {
  check_keys(j,
             {"n_birth", "t_term", "static_speed_thresh", "static_max_dist", "distance_rule", "classes",
              "offline_thresholds", "interpolate"},
             "tracker");
  read_opt(j, "n_birth", s.n_birth);
  read_opt(j, "t_term", s.t_term);
  read_opt(j, "static_speed_thresh", s.static_speed_thresh);
  read_opt(j, "static_max_dist", s.static_max_dist);
  read_opt(j, "distance_rule", s.distance_rule);
  read_opt(j, "classes", s.classes);
  read_opt(j, "offline_thresholds", s.offline_thresholds);
  read_opt(j, "interpolate", s.interpolate);
}

struct BenchSettings {
  std::vector<int> boxes{100, 200, 400, 800};
  int repeats = 3;
  int frames = 16;
};

inline void to_json(nlohmann::json& j, const BenchSettings& b) {
  j = {{"boxes", b.boxes}, {"repeats", b.repeats}, {"frames", b.frames}};
}

inline void from_json(const nlohmann::json& j, BenchSettings& b) {
  check_keys(j, {"boxes", "repeats", "frames"}, "bench");
  read_opt(j, "boxes", b.boxes);
  read_opt(j, "repeats", b.repeats);
  read_opt(j, "frames", b.frames);
}

/// Every setting of a run; JSON file values overlaid by command-line flags.
struct RunConfig {
  std::uint64_t seed = 0;
  int num_scenes = 10;
  SynthConfig synth;
  DbGenConfig gen_db;
  NetworkConfig network;
  TrainConfig train;
  TrackerSettings tracker;
  BenchSettings bench;
};

inline void to_json(nlohmann::json& j, const RunConfig& c) {
  j = {{"seed", c.seed},       {"num_scenes", c.num_scenes}, {"synth", c.synth},     {"gen_db", c.gen_db},
       {"network", c.network}, {"train", c.train},           {"tracker", c.tracker}, {"bench", c.bench}};
}

inline void from_json(const nlohmann::json& j, RunConfig& c) {
  check_keys(j, {"seed", "num_scenes", "synth", "gen_db", "network", "train", "tracker", "bench"}, "config");
  read_opt(j, "seed", c.seed);
  read_opt(j, "num_scenes", c.num_scenes);
  read_opt(j, "synth", c.synth);
  read_opt(j, "gen_db", c.gen_db);
  read_opt(j, "network", c.network);
  read_opt(j, "train", c.train);
  read_opt(j, "tracker", c.tracker);
  read_opt(j, "bench", c.bench);
}

inline void write_json_file(const std::filesystem::path& path, const nlohmann::json& j) {
  std::ofstream os(path);
  if (!os) throw DataError("cannot write " + path.string());
  os << j.dump(2) << '\n';
}

// ---------------------------------------------------------------------------
// Attention dump: gzip stream of per-frame records
//   i32 frame_idx | i32 layers | i32 heads | i32 N | float32[layers][heads][N][N]

class AttentionDump {
 public:
  explicit AttentionDump(const std::filesystem::path& path) : file_(gzopen(path.string().c_str(), "wb")) {
    if (!file_) throw DataError("cannot open " + path.string());
  }
  AttentionDump(const AttentionDump&) = delete;
  AttentionDump& operator=(const AttentionDump&) = delete;
  ~AttentionDump() {
    if (file_) gzclose(file_);
  }

  void write(int frame_idx, const AttentionTrace<float>& trace, int heads) {
    const auto layers = static_cast<std::int32_t>(trace.per_layer.size());
    std::int32_t n = 0;
    if (layers > 0 && !trace.per_layer.front().empty()) n = static_cast<std::int32_t>(trace.per_layer.front().front().rows());
    const std::int32_t header[4] = {frame_idx, layers, heads, n};
    put(header, sizeof(header));
    for (const auto& layer : trace.per_layer)
      for (const auto& p : layer) put(p.data(), static_cast<std::size_t>(p.size()) * sizeof(float));
  }

 private:
  void put(const void* data, std::size_t bytes) {
    if (bytes > 0 && gzwrite(file_, data, static_cast<unsigned>(bytes)) != static_cast<int>(bytes))
      throw DataError("attention dump: write failed");
  }
  gzFile file_;
};

// ---------------------------------------------------------------------------

struct CliArgs {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::optional<int> k;
  std::string mode = "online";
  std::string checkpoint;
  std::optional<double> hz;
  std::string data;
  std::string dets;
  std::string gt;
  std::string tracks;
  std::string boxes;
  std::optional<int> count;
  bool dump_attention = false;
  bool verbose = false;
};

inline RunConfig load_run_config(const CliArgs& a) {
  RunConfig rc;
  if (!a.config_path.empty()) {
    std::ifstream is(a.config_path);
    if (!is) throw ConfigError("cannot read config " + a.config_path);
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(is);
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError("config " + a.config_path + ": " + e.what());
    }
    rc = j.get<RunConfig>();
  }
  if (a.seed) rc.seed = *a.seed;
  rc.synth.seed = rc.seed;
  rc.train.seed = rc.seed;
  if (a.count) rc.num_scenes = *a.count;
  return rc;
}

inline std::vector<SceneDB> scenes_at(const std::string& path) {
  if (path.empty()) throw ConfigError("--data is required");
  auto scenes = load_scene_dir(path);
  if (scenes.empty()) throw DataError("no scenes found in " + path);
  return scenes;
}

inline std::filesystem::path prepare_out(const CliArgs& a, const RunConfig& rc, const std::string& command) {
  if (a.out.empty()) throw ConfigError("--out is required");
  std::filesystem::create_directories(a.out);
  nlohmann::json eff = rc;
  eff["command"] = command;
  write_json_file(std::filesystem::path(a.out) / "effective_config.json", eff);
  return a.out;
}

/// Brings a scene to `hz` by keeping every n-th frame.
inline SceneDB resample_to(const SceneDB& s, double hz) {
  const double ratio = s.frequency_hz / hz;
  const int factor = static_cast<int>(std::lround(ratio));
  if (factor < 1 || std::abs(ratio - factor) > 1e-6)
    throw ConfigError("--hz must divide the scene frequency " + std::to_string(s.frequency_hz));
  return downsample(s, factor);
}

inline int cmd_synth(const CliArgs& a, RunConfig rc) {
  if (a.hz) rc.synth.frequency_hz = *a.hz;
  const auto out = prepare_out(a, rc, "synth");
  for (int i = 0; i < rc.num_scenes; ++i) {
    const SceneDB s = gen_dataset_scene(rc.synth, static_cast<std::uint64_t>(i));
    save_scene(out / (s.scene_id + ".jsonl"), s);
  }
  std::cout << "wrote " << rc.num_scenes << " scenes to " << out.string() << '\n';
  return 0;
}

inline int cmd_gen_db(const CliArgs& a, RunConfig rc) {
  if (a.hz) rc.gen_db.target_hz = *a.hz;
  if (a.dets.empty() || a.gt.empty()) throw ConfigError("gen-db needs --dets and --gt");
  const auto out = prepare_out(a, rc, "gen-db");
  const auto dets = load_scene_dir(a.dets);
  const auto gts = load_scene_dir(a.gt);
  std::map<std::string, const SceneDB*> gt_by_id;
  for (const auto& g : gts) gt_by_id[g.scene_id] = &g;
  for (const auto& d : dets) {
    auto it = gt_by_id.find(d.scene_id);
    if (it == gt_by_id.end()) throw DataError("no ground truth for scene " + d.scene_id);
    const SceneDB db = generate_db(d, *it->second, rc.gen_db);
    save_scene(out / (db.scene_id + ".jsonl"), db);
  }
  std::cout << "labeled " << dets.size() << " scenes\n";
  return 0;
}

inline int cmd_train(const CliArgs& a, RunConfig rc) {
  if (a.k) rc.train.K = *a.k;
  const auto scenes = scenes_at(a.data);
  rc.network.input_dim = kGeometricFeatures + static_cast<int>(scenes.front().num_classes());
  rc.train.loss = loss_config_for(scenes.front().class_names, rc.train.loss);
  const auto out = prepare_out(a, rc, "train");
  TrainState st = a.checkpoint.empty() ? init_train_state(rc.network, rc.train) : load_train_state(a.checkpoint);
  TrainOptions opt;
  opt.out_dir = out;
  opt.quiet = !a.verbose;
  opt.warn = [](const std::string& w) { std::cerr << "warning: " << w << '\n'; };
  st = train(scenes, std::move(st), rc.train, opt);
  std::cout << "trained " << st.step << " steps; checkpoint " << (out / "checkpoint.bott").string() << '\n';
  return 0;
}

inline int cmd_track(const CliArgs& a, RunConfig rc) {
  if (a.mode != "online" && a.mode != "offline" && a.mode != "baseline")
    throw ConfigError("--mode must be online, offline or baseline");
  auto scenes = scenes_at(a.data);
  if (a.hz)
    for (auto& s : scenes) s = resample_to(s, *a.hz);
  const std::size_t K = static_cast<std::size_t>(a.k.value_or(rc.train.K));
  const auto out = prepare_out(a, rc, "track");
  const auto names = scenes.front().class_names;

  std::optional<Model> model;
  if (a.mode != "baseline") {
    if (a.checkpoint.empty()) throw ConfigError("track needs --checkpoint");
    model = load_checkpoint(a.checkpoint).model;
    if (model->config.num_classes() != static_cast<int>(names.size()))
      throw DataError("checkpoint class count does not match the scenes");
  }
  for (const auto& s : scenes) {
    std::vector<TrackFrame> frames;
    if (a.mode == "online") {
      std::unique_ptr<AttentionDump> dump;
      if (a.dump_attention) dump = std::make_unique<AttentionDump>(out / (s.scene_id + ".attn.gz"));
      LinkScorer scorer = [&](const SlidingWindow& w) {
        if (!dump) return forward(w, model->params, model->config);
        AttentionTrace<float> trace;
        auto ls = forward(w, model->params, model->config, &trace);
        dump->write(w.frames.back().frame_idx, trace, model->config.n_heads);
        return ls;
      };
      OnlineTracker tracker(rc.tracker.online(names, K), scorer);
      frames = run_tracker(tracker, s);
    } else if (a.mode == "offline") {
      frames = tracks_to_frames(track_offline(s, make_scorer(*model), rc.tracker.offline(names, K)), s.frames);
    } else if (a.mode == "baseline") {
      NearestNeighborTracker tracker(rc.tracker.online(names, K));
      frames = run_tracker(tracker, s);
    } else {
      throw ConfigError("--mode must be online, offline or baseline");
    }
    save_track_frames(out / (s.scene_id + ".jsonl"), frames);
  }
  std::cout << "tracked " << scenes.size() << " scenes (" << a.mode << ", K=" << K << ")\n";
  return 0;
}

inline int cmd_eval(const CliArgs& a, RunConfig rc) {
  auto scenes = scenes_at(a.data);
  if (a.hz)
    for (auto& s : scenes) s = resample_to(s, *a.hz);
  if (a.tracks.empty()) throw ConfigError("eval needs --tracks");
  const auto out = prepare_out(a, rc, "eval");
  std::vector<std::vector<TrackFrame>> preds;
  preds.reserve(scenes.size());
  for (const auto& s : scenes) preds.push_back(load_track_frames(std::filesystem::path(a.tracks) / (s.scene_id + ".jsonl")));
  std::vector<SceneEval> items;
  for (std::size_t i = 0; i < scenes.size(); ++i) items.push_back({&preds[i], &scenes[i]});
  const EvalResult r = evaluate(items);
  const nlohmann::json report = to_json(r);
  write_json_file(out / "eval.json", report);
  std::cout << report.dump(2) << '\n';
  return 0;
}

/// A random window of `n` boxes spread over `frames` frames.
inline SlidingWindow random_window(int n, int frames, std::size_t num_classes, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> pos(-50, 50), yaw(-3.1, 3.1);
  std::uniform_int_distribution<int> cls(0, static_cast<int>(num_classes) - 1);
  SlidingWindow w;
  for (int f = 0; f < frames; ++f) w.frames.push_back({f, 0.1 * f, {}});
  for (int i = 0; i < n; ++i) {
    const int f = i % frames;
    Box3D b;
    b.x = pos(rng);
    b.y = pos(rng);
    b.yaw = yaw(rng);
    b.t = 0.1 * f;
    b.frame_idx = f;
    b.class_scores = one_hot_scores(cls(rng), num_classes);
    b.box_id = static_cast<int>(w.frames[static_cast<std::size_t>(f)].boxes.size());
    w.frames[static_cast<std::size_t>(f)].boxes.push_back(b);
  }
  return w;
}

struct BenchRow {
  int boxes = 0;
  double ms = 0;
};

/// Minimum forward time over `repeats` runs for each box count.
inline std::vector<BenchRow> run_bench(const Model& model, const BenchSettings& b, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<BenchRow> rows;
  for (int n : b.boxes) {
    if (n < 1) throw ConfigError("bench: box counts must be positive");
    const SlidingWindow w = random_window(n, b.frames, static_cast<std::size_t>(model.config.num_classes()), rng);
    double best = std::numeric_limits<double>::infinity();
    for (int r = 0; r < std::max(1, b.repeats); ++r) {
      const auto t0 = std::chrono::steady_clock::now();
      const auto ls = forward(w, model.params, model.config);
      const auto t1 = std::chrono::steady_clock::now();
      if (ls.rows() != n) throw std::logic_error("bench: unexpected score shape");
      best = std::min(best, std::chrono::duration<double, std::milli>(t1 - t0).count());
    }
    rows.push_back({n, best});
  }
  return rows;
}

inline std::vector<int> parse_int_list(const std::string& s) {
  std::vector<int> out;
  std::stringstream ss(s);
  for (std::string item; std::getline(ss, item, ',');) {
    try {
      out.push_back(std::stoi(item));
    } catch (const std::exception&) {
      throw ConfigError("bad integer list '" + s + "'");
    }
  }
  return out;
}

inline int cmd_bench(const CliArgs& a, RunConfig rc) {
  if (!a.boxes.empty()) rc.bench.boxes = parse_int_list(a.boxes);
  Model model;
  if (!a.checkpoint.empty()) {
    model = load_checkpoint(a.checkpoint).model;
  } else {
    rc.network.input_dim = kGeometricFeatures + static_cast<int>(rc.synth.classes.size());
    auto rng = seeded_rng(rc.seed, 0x42454E43ull);
    model = make_model(rc.network, rng);
  }
  const auto rows = run_bench(model, rc.bench, rc.seed);
  nlohmann::json report = nlohmann::json::array();
  std::cout << "boxes\tforward_ms\n";
  for (const auto& r : rows) {
    std::cout << r.boxes << '\t' << r.ms << '\n';
    report.push_back({{"boxes", r.boxes}, {"forward_ms", r.ms}});
  }
  if (!a.out.empty()) write_json_file(prepare_out(a, rc, "bench") / "bench.json", report);
  return 0;
}

inline int dispatch(int argc, const char* const* argv) {
  CLI::App app{"Box-only transformer tracker"};
  app.require_subcommand(1);
  CliArgs a;
  auto common = [&a](CLI::App* sub) {
    sub->add_option("--config", a.config_path, "JSON run configuration");
    sub->add_option("--seed", a.seed, "Seed for every random stream");
    sub->add_option("--out", a.out, "Output directory");
    sub->add_flag("-v,--verbose", a.verbose, "Progress output");
  };
  auto* synth = app.add_subcommand("synth", "Generate synthetic labeled scenes");
  common(synth);
  synth->add_option("--count", a.count, "Number of scenes");
  synth->add_option("--hz", a.hz, "Frame rate");

  auto* gen = app.add_subcommand("gen-db", "Label detections against ground truth");
  common(gen);
  gen->add_option("--dets", a.dets, "Detection scene file or directory")->required();
  gen->add_option("--gt", a.gt, "Ground-truth scene file or directory")->required();
  gen->add_option("--hz", a.hz, "Target frequency");

  auto* train_cmd = app.add_subcommand("train", "Train a model");
  common(train_cmd);
  train_cmd->add_option("--data", a.data, "Scene file or directory")->required();
  train_cmd->add_option("--k", a.k, "Window length");
  train_cmd->add_option("--checkpoint", a.checkpoint, "Resume from this checkpoint");

  auto* track = app.add_subcommand("track", "Run a tracker over scenes");
  common(track);
  track->add_option("--data", a.data, "Scene file or directory")->required();
  track->add_option("--checkpoint", a.checkpoint, "Model checkpoint");
  track->add_option("--mode", a.mode, "online, offline or baseline");
  track->add_option("--k", a.k, "Deployment window length");
  track->add_option("--hz", a.hz, "Resample scenes to this frequency");
  track->add_flag("--dump-attention", a.dump_attention, "Write per-frame attention weights (online mode)");

  auto* eval = app.add_subcommand("eval", "Score tracker output");
  common(eval);
  eval->add_option("--data", a.data, "Scene file or directory")->required();
  eval->add_option("--tracks", a.tracks, "Directory of tracker output")->required();
  eval->add_option("--hz", a.hz, "Resample scenes to this frequency");

  auto* bench = app.add_subcommand("bench", "Forward time by box count");
  common(bench);
  bench->add_option("--boxes", a.boxes, "Comma-separated box counts");
  bench->add_option("--checkpoint", a.checkpoint, "Model checkpoint (random weights when absent)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    const RunConfig rc = load_run_config(a);
    if (*synth) return cmd_synth(a, rc);
    if (*gen) return cmd_gen_db(a, rc);
    if (*train_cmd) return cmd_train(a, rc);
    if (*track) return cmd_track(a, rc);
    if (*eval) return cmd_eval(a, rc);
    if (*bench) return cmd_bench(a, rc);
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 1;
}

}  // namespace bott
