#pragma once

#include <set>
#include <string>
#include <utility>

#include <json.hpp>

#include "handadapt/autodiff/errors.hpp"

namespace handadapt {

/// Strict reader for one JSON object: every key read is recorded, and
/// finish() rejects whatever was not read. Errors carry the JSON path.
class ObjectReader {
 public:
  ObjectReader(const nlohmann::json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(path_ + ": expected an object");
  }

  bool has(const std::string& key) const { return j_.contains(key); }
  std::string path(const std::string& key) const { return path_ + "." + key; }

  template <class T>
  T get(const std::string& key, T fallback) {
    seen_.insert(key);
    if (!j_.contains(key)) return fallback;
    return convert<T>(j_.at(key), path(key));
  }

  template <class T>
  T require(const std::string& key) {
    seen_.insert(key);
    if (!j_.contains(key)) throw ConfigError(path(key) + ": required key missing");
    return convert<T>(j_.at(key), path(key));
  }

  // Reads a two-element [lo, hi] array into the pair, if present.
  template <class T>
  void range(const std::string& key, T& lo, T& hi) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    const auto& v = j_.at(key);
    if (!v.is_array() || v.size() != 2) throw ConfigError(path(key) + ": expected [lo, hi]");
    lo = convert<T>(v[0], path(key) + "[0]");
    hi = convert<T>(v[1], path(key) + "[1]");
    if (lo > hi) throw ConfigError(path(key) + ": lo > hi");
  }

  const nlohmann::json* child(const std::string& key) {
    seen_.insert(key);
    return j_.contains(key) ? &j_.at(key) : nullptr;
  }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it) {
      if (!seen_.count(it.key())) throw ConfigError(path(it.key()) + ": unknown key");
    }
  }

 private:
  template <class T>
  static T convert(const nlohmann::json& v, const std::string& where) {
    try {
      if constexpr (std::is_same_v<T, double>) {
        if (!v.is_number()) throw ConfigError(where + ": expected a number");
      } else if constexpr (std::is_integral_v<T> && !std::is_same_v<T, bool>) {
        if (!v.is_number_integer()) throw ConfigError(where + ": expected an integer");
        if (std::is_unsigned_v<T> && v.get<long long>() < 0) throw ConfigError(where + ": expected a non-negative integer");
      } else if constexpr (std::is_same_v<T, bool>) {
        if (!v.is_boolean()) throw ConfigError(where + ": expected true/false");
      } else if constexpr (std::is_same_v<T, std::string>) {
        if (!v.is_string()) throw ConfigError(where + ": expected a string");
      }
      return v.get<T>();
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(where + ": " + e.what());
    }
  }

  const nlohmann::json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

}  // namespace handadapt
