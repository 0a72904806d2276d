// Flat key-value configuration files: `key = value` lines, '#' comments.
// Consumers mark the keys they read; anything left over is an unknown key
// and rejected by name.
#pragma once

#include <charconv>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "mcf/common.hpp"
#include "mcf/forest.hpp"

namespace mcf {

class KeyValueConfig {
 public:
  static KeyValueConfig parse_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file '" + path + "'");
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_text(ss.str(), path);
  }

  static KeyValueConfig parse_text(const std::string& text, const std::string& origin = "<text>") {
    KeyValueConfig cfg;
    cfg.origin_ = origin;
    std::istringstream in(text);
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      const auto hash = line.find('#');
      if (hash != std::string::npos) line.erase(hash);
      const std::string trimmed = trim(line);
      if (trimmed.empty()) continue;
      const auto eq = trimmed.find('=');
      if (eq == std::string::npos)
        throw ConfigError(origin + ":" + std::to_string(line_no) +
                          ": expected 'key = value', got '" + trimmed + "'");
      const std::string key = trim(trimmed.substr(0, eq));
      const std::string value = trim(trimmed.substr(eq + 1));
      if (key.empty())
        throw ConfigError(origin + ":" + std::to_string(line_no) + ": empty key");
      if (cfg.values_.count(key))
        throw ConfigError(origin + ":" + std::to_string(line_no) + ": duplicate key '" + key + "'");
      cfg.values_[key] = value;
    }
    return cfg;
  }

  bool has(const std::string& key) const { return values_.count(key) > 0; }

  std::string get_string(const std::string& key, const std::string& fallback = "") const {
    touch(key);
    const auto it = values_.find(key);
    return it == values_.end() ? fallback : it->second;
  }

  std::string require_string(const std::string& key) const {
    touch(key);
    const auto it = values_.find(key);
    if (it == values_.end()) throw ConfigError("missing required config key '" + key + "'");
    return it->second;
  }

  long long get_int(const std::string& key, long long fallback) const {
    touch(key);
    const auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    long long v = 0;
    const auto& s = it->second;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || ptr != s.data() + s.size())
      throw ConfigError("config key '" + key + "': expected an integer, got '" + s + "'");
    return v;
  }

  double get_double(const std::string& key, double fallback) const {
    touch(key);
    const auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    double v = 0;
    const auto& s = it->second;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || ptr != s.data() + s.size())
      throw ConfigError("config key '" + key + "': expected a number, got '" + s + "'");
    return v;
  }

  bool get_bool(const std::string& key, bool fallback) const {
    touch(key);
    const auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    if (it->second == "true" || it->second == "on" || it->second == "1") return true;
    if (it->second == "false" || it->second == "off" || it->second == "0") return false;
    throw ConfigError("config key '" + key + "': expected true/false, got '" + it->second + "'");
  }

  std::vector<std::string> get_list(const std::string& key) const {
    touch(key);
    const auto it = values_.find(key);
    std::vector<std::string> out;
    if (it == values_.end()) return out;
    std::stringstream ss(it->second);
    std::string item;
    while (std::getline(ss, item, ',')) {
      const std::string t = trim(item);
      if (!t.empty()) out.push_back(t);
    }
    return out;
  }

  // Call after all keys have been read.
  void reject_unknown_keys() const {
    for (const auto& [key, value] : values_) {
      if (!touched_.count(key))
        throw ConfigError(origin_ + ": unknown config key '" + key + "'");
    }
  }

 private:
  static std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
  }
  void touch(const std::string& key) const { touched_.insert(key); }

  std::string origin_;
  std::map<std::string, std::string> values_;
  mutable std::set<std::string> touched_;
};

// Estimator spec strings: base name with optional suffixes, e.g.
// "onef_mce.pen.lc5" or "onef_vart.penalty".
inline void apply_estimator_spec(const std::string& spec, ForestConfig& cfg) {
  std::vector<std::string> parts;
  std::stringstream ss(spec);
  std::string item;
  while (std::getline(ss, item, '.')) parts.push_back(item);
  if (parts.empty()) throw ConfigError("empty estimator spec");
  const std::string& base = parts.front();
  if (base == "basic") cfg.estimator = EstimatorKind::basic;
  else if (base == "basic_onesam") cfg.estimator = EstimatorKind::basic_onesam;
  else if (base == "onef") cfg.estimator = EstimatorKind::onef;
  else if (base == "onef_mce") cfg.estimator = EstimatorKind::onef_mce;
  else if (base == "onef_vart") cfg.estimator = EstimatorKind::onef_vart;
  else throw ConfigError("unknown estimator '" + base + "'");
  cfg.penalty = false;
  cfg.lc_folds = 0;
  for (std::size_t i = 1; i < parts.size(); ++i) {
    const std::string& suffix = parts[i];
    if (suffix == "pen" || suffix == "penalty") {
      cfg.penalty = true;
    } else if (suffix.rfind("lc", 0) == 0 && suffix.size() > 2) {
      cfg.lc_folds = std::stoi(suffix.substr(2));
    } else {
      throw ConfigError("unknown estimator suffix '" + suffix + "' in '" + spec + "'");
    }
  }
}

// Shared forest keys used by both `train` and `simulate` configs.
inline ForestConfig forest_config_from(const KeyValueConfig& kv) {
  ForestConfig cfg;
  apply_estimator_spec(kv.get_string("estimator", "onef_mce"), cfg);
  cfg.n_trees = static_cast<int>(kv.get_int("n_trees", 1000));
  cfg.subsample_ratio = kv.get_double("subsample_ratio", 0.5);
  cfg.split_fraction = kv.get_double("split_fraction", 0.5);
  cfg.tree.min_leaf = static_cast<int>(kv.get_int("min_leaf", 5));
  cfg.tree.min_leaf_per_treatment =
      static_cast<int>(kv.get_int("min_leaf_per_treatment", 2));
  cfg.tree.feature_poisson_mean = kv.get_double("feature_poisson_mean", 2.0);
  const long long depth = kv.get_int("max_depth", -1);
  if (depth >= 0) cfg.tree.max_depth = static_cast<int>(depth);
  cfg.tree.min_daughter_share = kv.get_double("min_daughter_share", 0.0);
  cfg.lc_folds = static_cast<int>(kv.get_int("lc_folds", cfg.lc_folds));
  cfg.lc_trees = static_cast<int>(kv.get_int("lc_trees", 0));
  cfg.knn_k = static_cast<int>(kv.get_int("knn_k", 0));
  cfg.seed = static_cast<std::uint64_t>(kv.get_int("seed", 17));
  cfg.threads = static_cast<int>(kv.get_int("threads", 1));
  if (kv.has("penalty_lambda")) {
    cfg.penalty = true;
    cfg.penalty_lambda_override = kv.get_double("penalty_lambda", 0.0);
  } else {
    cfg.penalty = kv.get_bool("penalty", cfg.penalty);
  }
  return cfg;
}

}  // namespace mcf
