#include "config.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

#include "shwmpc/error.hpp"
#include "shwmpc/model_io.hpp"

namespace shwmpc::cli {

json default_config() {
  return json::parse(R"({
  "seed": 0,
  "paths": {"data": null, "model": null, "nn_model": null},
  "plant": {"mode": "realizable", "seed": 6, "delta": 0.1, "z_state_only": false},
  "data": {"duration": 400.0, "dt": 0.1, "excitation_seed": null, "noise_y": 0.0,
           "noise_z": 0.0, "noise_seed": null},
  "model": {"bnn_depth": 2, "bnn_width": 8, "picnn_depth": 2, "picnn_width": 8,
            "dyn_width": 8, "xi_state_only": false},
  "ident": {"epochs": 200, "batch_size": 32, "learning_rate": 0.001,
            "final_lr_fraction": 0.01, "validation_fraction": 0.2,
            "lbfgs_iterations": 0, "k_e_diag": null,
            "check_val_loss": 0.0001, "check_r2": 0.99},
  "target": {"d": null, "y0": null, "r": null, "u_ref": [0.3, -0.2, 0.2]},
  "ocp": {"horizon": 20, "u_lower": null, "u_upper": null, "z_weight": [10000.0],
          "z_ceiling": [1.95], "z_penalty": true, "hard_z": false,
          "max_iterations": 500, "tolerance": 1e-8},
  "sweep": {"channel": 0, "from": -0.5, "to": 0.5, "points": 200, "inits": 10},
  "mpc": {"duration": 60.0,
          "reference": [{"t": 0.0, "u_eq": [0.0, 0.0, 0.0]},
                        {"t": 10.0, "u_eq": [0.4, -0.3, 0.3]},
                        {"t": 35.0, "u_eq": [-0.3, 0.3, -0.2]}],
          "disturbance": {"bias": [0.0, 0.0], "amplitude": [0.3, 0.2], "period": 40.0},
          "z_ceiling": [1.8], "settle_time": 8.0, "check_tracking": 0.01},
  "cbf": {"gamma": null, "z_ceiling": null, "convention": "printed", "q_diag": null,
          "steps": 10000, "substeps": 100, "y0": null, "lyapunov_samples": 100},
  "baseline": {"fixture": "trained", "width": 0, "epochs": 200, "batch_size": 32,
               "learning_rate": 0.003, "inits": 3, "horizon": null, "check_r2": 0.98}
})");
}

namespace {

const char* type_name(const json& j) {
  if (j.is_null()) return "null";
  if (j.is_boolean()) return "boolean";
  if (j.is_number()) return "number";
  if (j.is_string()) return "string";
  if (j.is_array()) return "array";
  return "object";
}

bool compatible(const json& def, const json& val) {
  if (val.is_null()) return def.is_null() || def.is_array();
  if (def.is_null()) return val.is_array() || val.is_number() || val.is_string();
  if (def.is_number()) return val.is_number();
  if (def.is_array()) return val.is_array();
  return std::string(type_name(def)) == type_name(val);
}

}  // namespace

void merge_checked(json& base, const json& user, const std::string& where) {
  if (!user.is_object()) throw ConfigError("config: " + (where.empty() ? "root" : where) + " must be an object");
  for (auto it = user.begin(); it != user.end(); ++it) {
    const std::string key = where.empty() ? it.key() : where + "." + it.key();
    if (!base.contains(it.key())) throw ConfigError("config: unknown key '" + key + "'");
    json& slot = base[it.key()];
    if (slot.is_object()) {
      merge_checked(slot, it.value(), key);
      continue;
    }
    if (!compatible(slot, it.value())) {
      throw ConfigError("config: key '" + key + "' expects " + type_name(slot) + ", got " +
                        type_name(it.value()));
    }
    if (it.value().is_array()) {
      for (const json& e : it.value()) {
        if (!e.is_number() && !e.is_object()) {
          throw ConfigError("config: key '" + key + "' must hold numbers");
        }
      }
    }
    slot = it.value();
  }
}

std::string config_hash(const json& doc) {
  const std::string s = doc.dump();
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

RunConfig load_config(const std::string& path, const std::vector<std::string>& sets,
                      std::optional<std::uint64_t> seed) {
  RunConfig rc;
  rc.doc = default_config();
  if (!path.empty()) {
    json user;
    try {
      user = json::parse(read_text_file(path));
    } catch (const json::exception& e) {
      throw ConfigError("config: '" + path + "' is not valid JSON: " + e.what());
    } catch (const Error& e) {
      throw ConfigError(e.what());
    }
    merge_checked(rc.doc, user, "");
  }
  for (const std::string& s : sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos || eq == 0) {
      throw ConfigError("--set expects key=value, got '" + s + "'");
    }
    const std::string key = s.substr(0, eq);
    const std::string text = s.substr(eq + 1);
    json value;
    try {
      value = json::parse(text);
    } catch (const json::exception&) {
      value = text;
    }
    // Build the nested object for the dotted path and merge it.
    json patch = value;
    std::string rest = key;
    std::vector<std::string> parts;
    for (std::size_t pos; (pos = rest.find('.')) != std::string::npos; rest = rest.substr(pos + 1)) {
      parts.push_back(rest.substr(0, pos));
    }
    parts.push_back(rest);
    for (auto it = parts.rbegin(); it != parts.rend(); ++it) patch = json{{*it, patch}};
    merge_checked(rc.doc, patch, "");
  }
  if (seed) rc.doc["seed"] = *seed;
  if (!rc.doc["seed"].is_number_unsigned() && !rc.doc["seed"].is_number_integer()) {
    throw ConfigError("config: key 'seed' must be a non-negative integer");
  }
  if (rc.doc["seed"].is_number_integer() && rc.doc["seed"].get<long long>() < 0) {
    throw ConfigError("config: key 'seed' must be a non-negative integer");
  }
  rc.seed = rc.doc["seed"].get<std::uint64_t>();
  rc.hash = config_hash(rc.doc);
  return rc;
}

Vector to_vector(const json& j, const std::string& key) {
  if (j.is_null()) return {};
  if (!j.is_array()) throw ConfigError("config: key '" + key + "' must be an array of numbers");
  Vector v(static_cast<Eigen::Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) {
    if (!j[i].is_number()) throw ConfigError("config: key '" + key + "' must hold numbers");
    v(static_cast<Eigen::Index>(i)) = j[i].get<double>();
  }
  return v;
}

std::uint64_t seed_or(const json& j, std::uint64_t fallback) {
  return j.is_null() ? fallback : j.get<std::uint64_t>();
}

}  // namespace shwmpc::cli
