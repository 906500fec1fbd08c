#pragma once

#include <cstdint>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "diamant/common.hpp"
#include "diamant/segnet.hpp"

namespace diamant {

// ---------------------------------------------------------------------------
// `key = value` configuration files ('#' starts a comment) and the training
// configuration assembled from them.
// ---------------------------------------------------------------------------

using KeyValues = std::map<std::string, std::string>;

namespace detail {

inline std::string strip(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

}  // namespace detail

inline KeyValues parse_config_text(const std::string& text) {
  KeyValues kv;
  std::size_t pos = 0, line_no = 0;
  while (pos <= text.size()) {
    const auto nl = text.find('\n', pos);
    std::string line = text.substr(pos, nl == std::string::npos ? std::string::npos : nl - pos);
    pos = nl == std::string::npos ? text.size() + 1 : nl + 1;
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = detail::strip(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config line " + std::to_string(line_no) + " is not `key = value`: '" +
                        line + "'");
    const auto key = detail::strip(line.substr(0, eq));
    const auto value = detail::strip(line.substr(eq + 1));
    if (key.empty())
      throw ConfigError("config line " + std::to_string(line_no) + " has an empty key");
    kv[key] = value;
  }
  return kv;
}

inline KeyValues load_config_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open config file " + path);
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return parse_config_text(text);
}

namespace detail {

inline std::int64_t to_i64(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const std::int64_t out = std::stoll(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return out;
  } catch (const std::exception&) {
    throw ConfigError("config key " + key + ": '" + v + "' is not an integer");
  }
}

inline double to_f64(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const double out = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return out;
  } catch (const std::exception&) {
    throw ConfigError("config key " + key + ": '" + v + "' is not a number");
  }
}

}  // namespace detail

struct TrainConfig {
  double lr0 = 1e-4;
  double weight_decay = 1e-4;
  std::int64_t batch_size = 8;
  std::int64_t max_epochs = 300;
  double lr_power = 0.9;
  std::int64_t early_stop_patience = 30;
  std::uint64_t seed = 0;
  std::int64_t eval_every = 1;
  SegNetConfig::Variant variant = SegNetConfig::Variant::Dual;
  SkipSwitches switches;
  std::int64_t image_size = 64;
  std::int64_t base_width = 8;

  static const std::vector<std::string>& known_keys() {
    static const std::vector<std::string> keys{
        "lr0",        "weight_decay", "batch_size", "max_epochs", "lr_power",
        "early_stop_patience", "seed", "eval_every", "variant",   "switches",
        "image_size", "base_width"};
    return keys;
  }

  void apply(const KeyValues& kv) {
    for (const auto& [key, value] : kv) {
      if (key == "lr0") lr0 = detail::to_f64(key, value);
      else if (key == "weight_decay") weight_decay = detail::to_f64(key, value);
      else if (key == "batch_size") batch_size = detail::to_i64(key, value);
      else if (key == "max_epochs") max_epochs = detail::to_i64(key, value);
      else if (key == "lr_power") lr_power = detail::to_f64(key, value);
      else if (key == "early_stop_patience") early_stop_patience = detail::to_i64(key, value);
      else if (key == "seed") seed = static_cast<std::uint64_t>(detail::to_i64(key, value));
      else if (key == "eval_every") eval_every = detail::to_i64(key, value);
      else if (key == "variant") variant = variant_from_name(value);
      else if (key == "switches") switches = SkipSwitches::from_string(value);
      else if (key == "image_size") image_size = detail::to_i64(key, value);
      else if (key == "base_width") base_width = detail::to_i64(key, value);
      else {
        std::string valid;
        for (const auto& k : known_keys()) valid += (valid.empty() ? "" : ", ") + k;
        throw ConfigError("unknown config key '" + key + "'; valid keys: " + valid);
      }
    }
    validate();
  }

  void validate() const {
    if (!(lr0 > 0)) throw ConfigError("lr0 must be > 0");
    if (batch_size < 2) throw ConfigError("batch_size must be >= 2 (batch statistics)");
    if (early_stop_patience < 1) throw ConfigError("early_stop_patience must be >= 1");
    if (max_epochs < 1) throw ConfigError("max_epochs must be >= 1");
    if (eval_every < 1) throw ConfigError("eval_every must be >= 1");
    if (image_size < 16 || image_size % 16 != 0)
      throw ConfigError("image_size must be a positive multiple of 16");
    if (base_width < 1) throw ConfigError("base_width must be >= 1");
    if (weight_decay < 0) throw ConfigError("weight_decay must be >= 0");
    if (!(lr_power > 0)) throw ConfigError("lr_power must be > 0");
  }
};

}  // namespace diamant
