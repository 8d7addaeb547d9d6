#pragma once

// Per-class physical constraints shared by the trackers: class equality,
// a velocity gate with a distance floor, and a static-object distance cap.

#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "bott/config_json.hpp"
#include "bott/geometry.hpp"
#include "bott/types.hpp"

namespace bott {

struct ClassLimits {
  double max_speed = 35.0;      // m/s
  double distance_floor = 3.0;  // m
  double min_link_score = 0.5;

  bool operator==(const ClassLimits&) const = default;
};

inline void to_json(nlohmann::json& j, const ClassLimits& c) {
  j = {{"max_speed", c.max_speed}, {"distance_floor", c.distance_floor}, {"min_link_score", c.min_link_score}};
}

inline void from_json(const nlohmann::json& j, ClassLimits& c) {
  check_keys(j, {"max_speed", "distance_floor", "min_link_score"}, "class limits");
  read_opt(j, "max_speed", c.max_speed);
  read_opt(j, "distance_floor", c.distance_floor);
  read_opt(j, "min_link_score", c.min_link_score);
}

inline ClassLimits default_class_limits(const std::string& name) {
  if (name == "bicycle" || name == "cyclist") return {20.0, 2.0, 0.6};
  if (name == "pedestrian") return {10.0, 1.5, 0.5};
  if (name == "car") return {35.0, 3.0, 0.4};
  return {35.0, 3.0, 0.5};
}

/// How the per-class distance threshold combines with the velocity gate.
enum class DistanceRule {
  floor,  // distance <= max(max_speed * dt, distance_floor)
  cap     // distance <= min(max_speed * dt, distance_floor)
};

struct GateConfig {
  std::vector<ClassLimits> per_class;  // indexed by class id
  double static_speed_thresh = 0.5;    // m/s
  double static_max_dist = 2.0;        // m
  DistanceRule distance_rule = DistanceRule::floor;

  const ClassLimits& limits(int class_id) const {
    if (class_id < 0 || static_cast<std::size_t>(class_id) >= per_class.size())
      throw std::domain_error("gate: no limits configured for class " + std::to_string(class_id));
    return per_class[static_cast<std::size_t>(class_id)];
  }

  void validate() const {
    if (!(static_speed_thresh >= 0 && static_max_dist >= 0)) throw ConfigError("gate: thresholds must be >= 0");
    for (const auto& c : per_class) {
      if (!(c.max_speed > 0 && c.distance_floor >= 0)) throw ConfigError("gate: class limits must be positive");
      if (!(c.min_link_score >= 0 && c.min_link_score <= 1))
        throw ConfigError("gate: min_link_score must lie in [0, 1]");
    }
  }
};

/// Defaults for a class taxonomy, with optional overrides by class name.
inline GateConfig make_gate_config(const std::vector<std::string>& class_names,
                                   const std::map<std::string, ClassLimits>& overrides = {}) {
  GateConfig g;
  for (const auto& n : class_names) {
    auto it = overrides.find(n);
    g.per_class.push_back(it == overrides.end() ? default_class_limits(n) : it->second);
  }
  return g;
}

inline bool is_static(const Box3D& b, double speed_thresh) {
  return b.velocity && std::hypot((*b.velocity)[0], (*b.velocity)[1]) < speed_thresh;
}

/// True when a link between two boxes from different frames is physically
/// admissible. A missing velocity skips the static check for that box.
inline bool gate(const Box3D& a, const Box3D& b, const GateConfig& cfg) {
  const int cls = a.class_id();
  if (cls != b.class_id()) return false;
  const double dt = std::abs(a.t - b.t);
  if (!(dt > 0)) return false;
  const ClassLimits& lim = cfg.limits(cls);
  const double dist = center_distance(a, b);
  const double reach = lim.max_speed * dt;
  const double limit = cfg.distance_rule == DistanceRule::floor ? std::max(reach, lim.distance_floor)
                                                                : std::min(reach, lim.distance_floor);
  if (dist > limit) return false;
  if ((is_static(a, cfg.static_speed_thresh) || is_static(b, cfg.static_speed_thresh)) &&
      dist > cfg.static_max_dist)
    return false;
  return true;
}

/// Max speeds by class id, as used by the training loss mask.
inline std::vector<double> class_max_speeds(const GateConfig& g) {
  std::vector<double> out;
  for (const auto& c : g.per_class) out.push_back(c.max_speed);
  return out;
}

}  // namespace bott
