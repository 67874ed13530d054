#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "shwmpc/linalg.hpp"

namespace shwmpc::cli {

using nlohmann::json;

/// Complete configuration with every key at its default. A user document may
/// only contain keys that appear here.
json default_config();

struct RunConfig {
  json doc;  // defaults merged with the user document and overrides
  std::string hash;
  std::uint64_t seed = 0;
};

/// Reads `path` (empty means defaults only), applies `--set key=value`
/// overrides and the seed override, and validates. Throws ConfigError naming
/// the offending key.
RunConfig load_config(const std::string& path, const std::vector<std::string>& sets,
                      std::optional<std::uint64_t> seed);

/// Merges `user` into `base`, rejecting unknown keys and type mismatches.
void merge_checked(json& base, const json& user, const std::string& where);

/// FNV-1a over the canonical dump, as 16 hex digits.
std::string config_hash(const json& doc);

/// Number arrays; null gives an empty vector.
Vector to_vector(const json& j, const std::string& key);
std::uint64_t seed_or(const json& j, std::uint64_t fallback);

}  // namespace shwmpc::cli
