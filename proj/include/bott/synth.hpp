#pragma once

// Synthetic labeled scenes: agents under static, constant-velocity and
// constant-turn-rate motion, observed through a noisy detector with misses
// and Poisson clutter.

#include <algorithm>
#include <array>
#include <cmath>
#include <iomanip>
#include <numbers>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "bott/config_json.hpp"
#include "bott/gating.hpp"
#include "bott/types.hpp"

namespace bott {

struct SynthClass {
  std::string name;
  int agents = 4;
  double speed_min = 1.0, speed_max = 10.0;  // m/s for moving agents
  std::array<double, 3> size{1.9, 4.5, 1.6};  // w, l, h
  double max_speed = 35.0;                    // limit the generator must respect

  bool operator==(const SynthClass&) const = default;
};

inline void to_json(nlohmann::json& j, const SynthClass& c) {
  j = {{"name", c.name},           {"agents", c.agents}, {"speed_min", c.speed_min},
       {"speed_max", c.speed_max}, {"size", c.size},     {"max_speed", c.max_speed}};
}

inline void from_json(const nlohmann::json& j, SynthClass& c) {
  check_keys(j, {"name", "agents", "speed_min", "speed_max", "size", "max_speed"}, "synth class");
  read_opt(j, "name", c.name);
  read_opt(j, "agents", c.agents);
  read_opt(j, "speed_min", c.speed_min);
  read_opt(j, "speed_max", c.speed_max);
  read_opt(j, "size", c.size);
  read_opt(j, "max_speed", c.max_speed);
}

inline std::vector<SynthClass> default_synth_classes() {
  return {
      {"car", 6, 3.0, 14.0, {1.9, 4.5, 1.6}, default_class_limits("car").max_speed},
      {"pedestrian", 4, 0.6, 2.0, {0.7, 0.7, 1.75}, default_class_limits("pedestrian").max_speed},
      {"bicycle", 2, 2.0, 7.0, {0.6, 1.8, 1.4}, default_class_limits("bicycle").max_speed},
  };
}

struct SynthConfig {
  std::vector<SynthClass> classes = default_synth_classes();
  double duration_s = 4.0;
  double frequency_hz = 10.0;
  // Motion mix; normalized internally.
  double p_static = 0.2, p_cv = 0.5, p_ctrv = 0.3;
  double max_turn_rate = 0.4;  // rad/s
  double size_jitter = 0.1;    // relative
  double sigma_center = 0.1, sigma_size = 0.05, sigma_yaw = 0.05, sigma_velocity = 0.2;
  double miss_prob = 0.1;
  double clutter_rate = 1.0;  // expected false positives per frame
  double partial_life_prob = 0.3;  // agents that enter or leave mid-scene
  double arena = 80.0;             // side of the square arena, meters
  std::uint64_t seed = 0;

  std::vector<std::string> class_names() const {
    std::vector<std::string> out;
    for (const auto& c : classes) out.push_back(c.name);
    return out;
  }

  int num_frames() const { return static_cast<int>(std::lround(duration_s * frequency_hz)); }

  void validate() const {
    if (classes.empty()) throw ConfigError("synth: no classes");
    for (const auto& c : classes) {
      if (c.agents < 0) throw ConfigError("synth: negative agent count");
      if (!(c.speed_min >= 0 && c.speed_max >= c.speed_min)) throw ConfigError("synth: bad speed range");
      if (c.speed_max > c.max_speed) throw ConfigError("synth: speed range of '" + c.name + "' exceeds its limit");
      for (double s : c.size)
        if (!(s > 0)) throw ConfigError("synth: sizes must be positive");
    }
    for (double p : {p_static, p_cv, p_ctrv, miss_prob, partial_life_prob, size_jitter})
      if (!(p >= 0 && p <= 1)) throw ConfigError("synth: probabilities must lie in [0, 1]");
    if (!(p_static + p_cv + p_ctrv > 0)) throw ConfigError("synth: empty motion mix");
    for (double s : {sigma_center, sigma_size, sigma_yaw, sigma_velocity, clutter_rate, max_turn_rate})
      if (!(s >= 0)) throw ConfigError("synth: noise and rates must be >= 0");
    if (!(duration_s > 0 && frequency_hz > 0 && arena > 0)) throw ConfigError("synth: bad scene extent");
    if (num_frames() < 1) throw ConfigError("synth: scene has no frames");
  }
};

inline void to_json(nlohmann::json& j, const SynthConfig& c) {
  j = {{"classes", c.classes},
       {"duration_s", c.duration_s},
       {"frequency_hz", c.frequency_hz},
       {"p_static", c.p_static},
       {"p_cv", c.p_cv},
       {"p_ctrv", c.p_ctrv},
       {"max_turn_rate", c.max_turn_rate},
       {"size_jitter", c.size_jitter},
       {"sigma_center", c.sigma_center},
       {"sigma_size", c.sigma_size},
       {"sigma_yaw", c.sigma_yaw},
       {"sigma_velocity", c.sigma_velocity},
       {"miss_prob", c.miss_prob},
       {"clutter_rate", c.clutter_rate},
       {"partial_life_prob", c.partial_life_prob},
       {"arena", c.arena},
       {"seed", c.seed}};
}

inline void from_json(const nlohmann::json& j, SynthConfig& c) {
  check_keys(j,
             {"classes", "duration_s", "frequency_hz", "p_static", "p_cv", "p_ctrv", "max_turn_rate", "size_jitter",
              "sigma_center", "sigma_size", "sigma_yaw", "sigma_velocity", "miss_prob", "clutter_rate",
              "partial_life_prob", "arena", "seed"},
             "synth");
  read_opt(j, "classes", c.classes);
  read_opt(j, "duration_s", c.duration_s);
  read_opt(j, "frequency_hz", c.frequency_hz);
  read_opt(j, "p_static", c.p_static);
  read_opt(j, "p_cv", c.p_cv);
  read_opt(j, "p_ctrv", c.p_ctrv);
  read_opt(j, "max_turn_rate", c.max_turn_rate);
  read_opt(j, "size_jitter", c.size_jitter);
  read_opt(j, "sigma_center", c.sigma_center);
  read_opt(j, "sigma_size", c.sigma_size);
  read_opt(j, "sigma_yaw", c.sigma_yaw);
  read_opt(j, "sigma_velocity", c.sigma_velocity);
  read_opt(j, "miss_prob", c.miss_prob);
  read_opt(j, "clutter_rate", c.clutter_rate);
  read_opt(j, "partial_life_prob", c.partial_life_prob);
  read_opt(j, "arena", c.arena);
  read_opt(j, "seed", c.seed);
}

enum class Motion { stationary, constant_velocity, constant_turn_rate };

/// One simulated object with closed-form kinematics.
struct Agent {
  int id = 0;
  int class_id = 0;
  Motion motion = Motion::stationary;
  double x0 = 0, y0 = 0, z = 0;
  double heading0 = 0, speed = 0, turn_rate = 0;
  double w = 1, l = 1, h = 1;
  int first_frame = 0, last_frame = 0;  // inclusive

  /// Center, heading and velocity at time t (seconds from scene start).
  std::array<double, 5> state(double t) const {
    double x = x0, y = y0, th = heading0;
    if (motion == Motion::constant_velocity) {
      x += speed * std::cos(th) * t;
      y += speed * std::sin(th) * t;
    } else if (motion == Motion::constant_turn_rate) {
      th = heading0 + turn_rate * t;
      x += speed / turn_rate * (std::sin(th) - std::sin(heading0));
      y += speed / turn_rate * (std::cos(heading0) - std::cos(th));
    }
    const double v = motion == Motion::stationary ? 0.0 : speed;
    return {x, y, th, v * std::cos(th), v * std::sin(th)};
  }
};

template <typename Rng>
std::vector<Agent> spawn_agents(const SynthConfig& cfg, Rng& rng) {
  const int T = cfg.num_frames();
  std::uniform_real_distribution<double> pos(-cfg.arena / 2, cfg.arena / 2);
  std::uniform_real_distribution<double> angle(-std::numbers::pi, std::numbers::pi);
  std::uniform_real_distribution<double> jitter(1.0 - cfg.size_jitter, 1.0 + cfg.size_jitter);
  std::discrete_distribution<int> motion({cfg.p_static, cfg.p_cv, cfg.p_ctrv});
  std::bernoulli_distribution partial(cfg.partial_life_prob);
  std::vector<Agent> out;
  int next_id = 0;
  for (std::size_t c = 0; c < cfg.classes.size(); ++c) {
    const SynthClass& sc = cfg.classes[c];
    std::uniform_real_distribution<double> speed(sc.speed_min, sc.speed_max);
    for (int k = 0; k < sc.agents; ++k) {
      Agent a;
      a.id = next_id++;
      a.class_id = static_cast<int>(c);
      a.motion = static_cast<Motion>(motion(rng));
      a.x0 = pos(rng);
      a.y0 = pos(rng);
      a.z = 0.5 * sc.size[2];
      a.heading0 = angle(rng);
      a.speed = a.motion == Motion::stationary ? 0.0 : speed(rng);
      if (a.motion == Motion::constant_turn_rate) {
        std::uniform_real_distribution<double> rate(0.05, std::max(0.05, cfg.max_turn_rate));
        a.turn_rate = rate(rng) * (std::bernoulli_distribution(0.5)(rng) ? 1.0 : -1.0);
      }
      a.w = sc.size[0] * jitter(rng);
      a.l = sc.size[1] * jitter(rng);
      a.h = sc.size[2] * jitter(rng);
      a.first_frame = 0;
      a.last_frame = T - 1;
      if (partial(rng) && T > 2) {
        std::uniform_int_distribution<int> len(std::min(T, 10), T);
        const int n = len(rng);
        std::uniform_int_distribution<int> start(0, T - n);
        a.first_frame = start(rng);
        a.last_frame = a.first_frame + n - 1;
      }
      if (a.speed > sc.max_speed) throw std::logic_error("synth: agent exceeds its class speed limit");
      out.push_back(a);
    }
  }
  return out;
}

/// Generates one labeled scene. Every detection carries its agent id (or
/// none for clutter); gt_boxes hold the exact object states.
template <typename Rng>
SceneDB gen_scene(const SynthConfig& cfg, Rng& rng, const std::string& scene_id = "synth") {
  cfg.validate();
  const int T = cfg.num_frames();
  const std::size_t C = cfg.classes.size();
  const auto agents = spawn_agents(cfg, rng);

  std::bernoulli_distribution miss(cfg.miss_prob);
  std::poisson_distribution<int> clutter(cfg.clutter_rate > 0 ? cfg.clutter_rate : 1.0);
  std::uniform_real_distribution<double> pos(-cfg.arena / 2, cfg.arena / 2);
  std::uniform_real_distribution<double> angle(-std::numbers::pi, std::numbers::pi);
  std::uniform_real_distribution<double> tp_score(0.5, 1.0), fp_score(0.1, 0.6);
  std::uniform_int_distribution<int> any_class(0, static_cast<int>(C) - 1);
  std::normal_distribution<double> unit(0.0, 1.0);
  auto noise = [&](double sigma) { return sigma > 0 ? sigma * unit(rng) : 0.0; };

  SceneDB db;
  db.scene_id = scene_id;
  db.frequency_hz = cfg.frequency_hz;
  db.class_names = cfg.class_names();
  for (int f = 0; f < T; ++f) {
    const double t = f / cfg.frequency_hz;
    DetectionFrame frame{f, t, {}};
    std::vector<Box3D> gts;
    for (const Agent& a : agents) {
      if (f < a.first_frame || f > a.last_frame) continue;
      const auto s = a.state(t);
      Box3D g;
      g.x = s[0];
      g.y = s[1];
      g.z = a.z;
      g.w = a.w;
      g.l = a.l;
      g.h = a.h;
      g.yaw = wrap_angle(s[2]);
      g.t = t;
      g.frame_idx = f;
      g.class_scores = one_hot_scores(a.class_id, C);
      g.velocity = std::array<double, 2>{s[3], s[4]};
      g.det_score = 1.0;
      g.gt_track_id = a.id;
      g.box_id = static_cast<int>(gts.size());
      gts.push_back(g);
      if (miss(rng)) continue;
      Box3D d = g;
      d.x += noise(cfg.sigma_center);
      d.y += noise(cfg.sigma_center);
      d.z += noise(cfg.sigma_center);
      d.w = std::max(0.1, d.w + noise(cfg.sigma_size));
      d.l = std::max(0.1, d.l + noise(cfg.sigma_size));
      d.h = std::max(0.1, d.h + noise(cfg.sigma_size));
      d.yaw = wrap_angle(d.yaw + noise(cfg.sigma_yaw));
      d.velocity = std::array<double, 2>{s[3] + noise(cfg.sigma_velocity), s[4] + noise(cfg.sigma_velocity)};
      d.det_score = tp_score(rng);
      d.class_scores = one_hot_scores(a.class_id, C, d.det_score);
      frame.boxes.push_back(d);
    }
    const int n_fp = cfg.clutter_rate > 0 ? clutter(rng) : 0;
    for (int k = 0; k < n_fp; ++k) {
      const int c = any_class(rng);
      const auto& sz = cfg.classes[static_cast<std::size_t>(c)].size;
      Box3D d;
      d.x = pos(rng);
      d.y = pos(rng);
      d.z = 0.5 * sz[2];
      d.w = sz[0];
      d.l = sz[1];
      d.h = sz[2];
      d.yaw = wrap_angle(angle(rng));
      d.t = t;
      d.frame_idx = f;
      d.velocity = std::array<double, 2>{noise(1.0), noise(1.0)};
      d.det_score = fp_score(rng);
      d.class_scores = one_hot_scores(c, C, d.det_score);
      frame.boxes.push_back(d);
    }
    std::shuffle(frame.boxes.begin(), frame.boxes.end(), rng);
    for (std::size_t i = 0; i < frame.boxes.size(); ++i) frame.boxes[i].box_id = static_cast<int>(i);
    db.frames.push_back(std::move(frame));
    db.gt_boxes.push_back(std::move(gts));
  }
  rebuild_gt_tracks(db);
  return db;
}

/// Scene `index` of a deterministic dataset: each scene draws from its own
/// stream seeded by (cfg.seed, index).
inline SceneDB gen_dataset_scene(const SynthConfig& cfg, std::uint64_t index, const std::string& prefix = "scene") {
  std::seed_seq seq{static_cast<std::uint32_t>(cfg.seed), static_cast<std::uint32_t>(cfg.seed >> 32),
                    static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32)};
  std::mt19937_64 rng(seq);
  std::ostringstream name;
  name << prefix << '_' << std::setw(5) << std::setfill('0') << index;
  return gen_scene(cfg, rng, name.str());
}

inline std::vector<SceneDB> gen_dataset(const SynthConfig& cfg, std::size_t count, std::uint64_t first_index = 0,
                                        const std::string& prefix = "scene") {
  std::vector<SceneDB> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) out.push_back(gen_dataset_scene(cfg, first_index + i, prefix));
  return out;
}

}  // namespace bott
