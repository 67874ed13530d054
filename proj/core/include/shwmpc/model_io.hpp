#pragma once

// Model file: one JSON document. The header carries the architecture; every
// parameter tensor is a base64 string of little-endian float64 values.

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "shwmpc/shw_model.hpp"

namespace shwmpc {

/// Provenance stamped into every artifact.
struct ArtifactMeta {
  std::string config_hash;
  std::uint64_t seed = 0;
  std::string kind;  // e.g. "shw-model", "nn-model"
};

std::string base64_encode(std::span<const std::uint8_t> bytes);
/// Throws Error on malformed input.
std::vector<std::uint8_t> base64_decode(std::string_view text);

std::string encode_doubles(std::span<const double> values);
std::vector<double> decode_doubles(std::string_view text);

std::string model_to_json(const ShwModel& m, const ArtifactMeta& meta = {});
/// Parses and validates a model document. Throws Error / DimensionError.
ShwModel model_from_json(const std::string& text, ArtifactMeta* meta = nullptr);

void save_model(const std::string& path, const ShwModel& m, const ArtifactMeta& meta = {});
ShwModel load_model(const std::string& path, ArtifactMeta* meta = nullptr);

/// Reads a whole file; throws Error if it cannot be opened.
std::string read_text_file(const std::string& path);
void write_text_file(const std::string& path, const std::string& text);

}  // namespace shwmpc
