#pragma once

#include <set>
#include <string>

#include <json.hpp>

#include "futr/common.hpp"

namespace futr {

using json = nlohmann::json;

// Config surfaces reject unknown keys so typos fail loudly.
inline void reject_unknown_keys(const json& j, const std::string& where,
                                const std::set<std::string>& allowed) {
  if (!j.is_object()) throw ConfigError(where + ": expected a JSON object");
  for (auto it = j.begin(); it != j.end(); ++it)
    if (!allowed.count(it.key()))
      throw ConfigError(where + ": unknown key '" + it.key() + "'");
}

template <typename T>
T json_get(const json& j, const std::string& where, const std::string& key,
           const T& fallback) {
  if (!j.contains(key)) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(where + "." + key + ": " + e.what());
  }
}

template <typename T>
T json_require(const json& j, const std::string& where,
               const std::string& key) {
  if (!j.contains(key))
    throw ConfigError(where + ": missing required key '" + key + "'");
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(where + "." + key + ": " + e.what());
  }
}

}  // namespace futr
