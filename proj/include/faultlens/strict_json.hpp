#pragma once

#include <algorithm>
#include <initializer_list>
#include <string>
#include <string_view>

#include <nlohmann/json.hpp>

#include "faultlens/error.hpp"

namespace faultlens::json {

/// Throws ConfigError if `obj` is not an object or has a key outside
/// `allowed`. `where` names the enclosing section in the message.
inline void reject_unknown_keys(const nlohmann::json& obj,
                                std::initializer_list<std::string_view> allowed,
                                std::string_view where) {
  if (!obj.is_object()) {
    throw ConfigError(std::string(where) + ": expected an object");
  }
  for (const auto& [key, value] : obj.items()) {
    if (std::find(allowed.begin(), allowed.end(), key) == allowed.end()) {
      std::string msg = std::string(where) + ": unknown key '" + key +
                        "' (allowed:";
      for (std::string_view a : allowed) msg += " " + std::string(a);
      throw ConfigError(msg + ")");
    }
  }
}

template <class T>
T get_or(const nlohmann::json& obj, const char* key, T fallback) {
  auto it = obj.find(key);
  return it == obj.end() ? fallback : it->get<T>();
}

}  // namespace faultlens::json
