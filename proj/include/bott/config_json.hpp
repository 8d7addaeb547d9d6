#pragma once

// Helpers for strict JSON configuration objects: every field is optional
// (struct defaults apply) but unknown keys are rejected.

#include <initializer_list>
#include <stdexcept>
#include <string>

#include "json.hpp"

namespace bott {

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

inline void check_keys(const nlohmann::json& j, std::initializer_list<const char*> allowed, const char* where) {
  if (!j.is_object()) throw ConfigError(std::string(where) + ": expected a JSON object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool ok = false;
    for (const char* a : allowed) ok = ok || it.key() == a;
    if (!ok) throw ConfigError(std::string(where) + ": unknown key '" + it.key() + "'");
  }
}

template <typename V>
void read_opt(const nlohmann::json& j, const char* key, V& out) {
  if (auto it = j.find(key); it != j.end()) {
    try {
      it->get_to(out);
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(std::string("bad value for '") + key + "': " + e.what());
    }
  }
}

}  // namespace bott
