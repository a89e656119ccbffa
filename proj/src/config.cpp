#include "bafpn/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

namespace bafpn {

namespace {

using nlohmann::json;

void reject_unknown(const json& obj, const std::set<std::string>& allowed, const char* where) {
  for (const auto& [key, _] : obj.items()) {
    if (!allowed.count(key)) {
      throw ConfigError(std::string(where) + ": unknown key '" + key + "'");
    }
  }
}

std::int64_t get_int(const json& obj, const char* key, std::int64_t fallback) {
  if (!obj.contains(key)) return fallback;
  if (!obj[key].is_number_integer()) throw ConfigError(std::string(key) + ": expected an integer");
  return obj[key].get<std::int64_t>();
}

double get_num(const json& obj, const char* key, double fallback) {
  if (!obj.contains(key)) return fallback;
  if (!obj[key].is_number()) throw ConfigError(std::string(key) + ": expected a number");
  return obj[key].get<double>();
}

std::string get_str(const json& obj, const char* key, const std::string& fallback) {
  if (!obj.contains(key)) return fallback;
  if (!obj[key].is_string()) throw ConfigError(std::string(key) + ": expected a string");
  return obj[key].get<std::string>();
}

bool get_bool(const json& obj, const char* key, bool fallback) {
  if (!obj.contains(key)) return fallback;
  if (!obj[key].is_boolean()) throw ConfigError(std::string(key) + ": expected a boolean");
  return obj[key].get<bool>();
}

}  // namespace

NeckConfig parse_config_text(const std::string& text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("invalid JSON: ") + e.what());
  }
  if (!doc.is_object()) throw ConfigError("config root must be a JSON object");
  reject_unknown(doc,
                 {"levels", "in_channels", "out_channels", "galm_groups", "attn_kernel",
                  "attn_reduction", "variant", "upsample", "output_convs", "seed", "experiment"},
                 "config");

  NeckConfig cfg;
  if (!doc.contains("levels")) throw ConfigError("levels: required key is missing");
  cfg.levels = static_cast<int>(get_int(doc, "levels", 0));
  if (!doc.contains("in_channels")) throw ConfigError("in_channels: required key is missing");
  if (!doc["in_channels"].is_array()) throw ConfigError("in_channels: expected an array");
  for (const auto& v : doc["in_channels"]) {
    if (!v.is_number_integer()) throw ConfigError("in_channels: entries must be integers");
    cfg.in_channels.push_back(v.get<std::int64_t>());
  }
  cfg.out_channels = get_int(doc, "out_channels", cfg.out_channels);
  cfg.galm_groups = get_int(doc, "galm_groups", cfg.galm_groups);
  cfg.attn_kernel = static_cast<int>(get_int(doc, "attn_kernel", cfg.attn_kernel));
  cfg.attn_reduction = static_cast<int>(get_int(doc, "attn_reduction", cfg.attn_reduction));
  cfg.variant = get_str(doc, "variant", cfg.variant);
  cfg.upsample = get_str(doc, "upsample", cfg.upsample);
  cfg.output_convs = get_bool(doc, "output_convs", cfg.output_convs);
  const std::int64_t seed = get_int(doc, "seed", static_cast<std::int64_t>(cfg.seed));
  if (seed < 0) throw ConfigError("seed: must be non-negative");
  cfg.seed = static_cast<std::uint64_t>(seed);

  if (doc.contains("experiment")) {
    const json& exp = doc["experiment"];
    if (!exp.is_object()) throw ConfigError("experiment: expected an object");
    reject_unknown(exp, {"base_hw", "batch", "shift_px", "warp_amp", "steps", "lr", "optimizer"},
                   "experiment");
    auto& e = cfg.experiment;
    e.base_hw = static_cast<int>(get_int(exp, "base_hw", e.base_hw));
    e.batch = static_cast<int>(get_int(exp, "batch", e.batch));
    if (exp.contains("shift_px")) {
      const json& s = exp["shift_px"];
      if (!s.is_array() || s.size() != 2 || !s[0].is_number() || !s[1].is_number()) {
        throw ConfigError("shift_px: expected [dy, dx]");
      }
      e.shift_dy = s[0].get<double>();
      e.shift_dx = s[1].get<double>();
    }
    e.warp_amp = get_num(exp, "warp_amp", e.warp_amp);
    e.steps = static_cast<int>(get_int(exp, "steps", e.steps));
    e.lr = get_num(exp, "lr", e.lr);
    e.optimizer = get_str(exp, "optimizer", e.optimizer);
    if (e.optimizer != "adam" && e.optimizer != "sgd") {
      throw ConfigError("optimizer: '" + e.optimizer + "' not one of adam, sgd");
    }
    if (e.steps < 1) throw ConfigError("steps: must be positive");
    if (e.batch < 1) throw ConfigError("batch: must be positive");
  }

  validate_neck_config(cfg);
  return cfg;
}

NeckConfig load_config(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot open config file '" + path + "'");
  std::stringstream ss;
  ss << f.rdbuf();
  return parse_config_text(ss.str());
}

}  // namespace bafpn
