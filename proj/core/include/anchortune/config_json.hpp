#pragma once

#include <algorithm>
#include <initializer_list>
#include <string>
#include <string_view>

#include <json.hpp>

#include "anchortune/error.hpp"

// Helpers for config sections: every field optional, unknown keys rejected,
// type errors reported with the dotted field path.
namespace anchortune::cfg {

using nlohmann::json;

inline void reject_unknown(const json& j, std::initializer_list<std::string_view> keys, std::string_view where) {
  if (!j.is_object()) throw ConfigError(std::string(where) + ": expected an object");
  for (auto it = j.begin(); it != j.end(); ++it)
    if (std::find(keys.begin(), keys.end(), it.key()) == keys.end())
      throw ConfigError(std::string(where) + ": unknown key '" + it.key() + "'");
}

template <typename T>
void read(const json& j, const char* key, T& out, std::string_view where) {
  auto it = j.find(key);
  if (it == j.end()) return;
  try {
    out = it->template get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string(where) + "." + key + ": " + e.what());
  }
}

// Stored artifacts carry every field: throws FormatError naming the first key
// of `reference` missing from `j`.
inline void require_keys(const json& j, const json& reference, std::string_view where) {
  if (!j.is_object()) throw FormatError(std::string(where) + ": expected an object");
  for (auto it = reference.begin(); it != reference.end(); ++it)
    if (!j.contains(it.key())) throw FormatError(std::string(where) + ": missing field '" + it.key() + "'");
}

}  // namespace anchortune::cfg
