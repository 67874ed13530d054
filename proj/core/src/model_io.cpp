#include "shwmpc/model_io.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "shwmpc/error.hpp"

namespace shwmpc {
namespace {

using nlohmann::json;

constexpr char kAlphabet[] =
    "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";
constexpr int kFormatVersion = 1;

int b64_value(char c) {
  if (c >= 'A' && c <= 'Z') return c - 'A';
  if (c >= 'a' && c <= 'z') return c - 'a' + 26;
  if (c >= '0' && c <= '9') return c - '0' + 52;
  if (c == '+') return 62;
  if (c == '/') return 63;
  return -1;
}

json bnn_to_json(const BnnParams& p) {
  json j;
  j["xi_dim"] = p.arch.xi_dim;
  j["eta_dim"] = p.arch.eta_dim;
  j["depth"] = p.arch.depth;
  j["width"] = p.arch.width;
  j["variant"] = p.arch.variant == BnnVariant::kDiagonal ? "diagonal" : "general";
  j["diag_sign"] = p.arch.diag_sign;
  j["theta"] = encode_doubles(p.theta);
  return j;
}

BnnParams bnn_from_json(const json& j) {
  BnnParams p;
  p.arch.xi_dim = j.at("xi_dim").get<int>();
  p.arch.eta_dim = j.at("eta_dim").get<int>();
  p.arch.depth = j.at("depth").get<int>();
  p.arch.width = j.at("width").get<int>();
  const std::string variant = j.at("variant").get<std::string>();
  if (variant == "diagonal") {
    p.arch.variant = BnnVariant::kDiagonal;
  } else if (variant == "general") {
    p.arch.variant = BnnVariant::kGeneral;
  } else {
    throw Error("model file: unknown BNN variant '" + variant + "'");
  }
  p.arch.diag_sign = j.at("diag_sign").get<std::vector<double>>();
  p.arch.validate();
  p.theta = decode_doubles(j.at("theta").get<std::string>());
  return p;
}

}  // namespace

std::string base64_encode(std::span<const std::uint8_t> bytes) {
  std::string out;
  out.reserve((bytes.size() + 2) / 3 * 4);
  std::size_t i = 0;
  for (; i + 3 <= bytes.size(); i += 3) {
    const std::uint32_t v = (bytes[i] << 16) | (bytes[i + 1] << 8) | bytes[i + 2];
    out.push_back(kAlphabet[(v >> 18) & 63]);
    out.push_back(kAlphabet[(v >> 12) & 63]);
    out.push_back(kAlphabet[(v >> 6) & 63]);
    out.push_back(kAlphabet[v & 63]);
  }
  const std::size_t rest = bytes.size() - i;
  if (rest > 0) {
    std::uint32_t v = bytes[i] << 16;
    if (rest == 2) v |= bytes[i + 1] << 8;
    out.push_back(kAlphabet[(v >> 18) & 63]);
    out.push_back(kAlphabet[(v >> 12) & 63]);
    out.push_back(rest == 2 ? kAlphabet[(v >> 6) & 63] : '=');
    out.push_back('=');
  }
  return out;
}

std::vector<std::uint8_t> base64_decode(std::string_view text) {
  if (text.size() % 4 != 0) throw Error("base64: length is not a multiple of 4");
  std::vector<std::uint8_t> out;
  out.reserve(text.size() / 4 * 3);
  for (std::size_t i = 0; i < text.size(); i += 4) {
    int v[4];
    int pad = 0;
    for (int k = 0; k < 4; ++k) {
      const char c = text[i + k];
      if (c == '=' && i + 4 == text.size() && k >= 2) {
        v[k] = 0;
        ++pad;
      } else {
        if (pad > 0) throw Error("base64: data after padding");
        v[k] = b64_value(c);
        if (v[k] < 0) throw Error("base64: invalid character");
      }
    }
    const std::uint32_t w = (v[0] << 18) | (v[1] << 12) | (v[2] << 6) | v[3];
    out.push_back(static_cast<std::uint8_t>(w >> 16));
    if (pad < 2) out.push_back(static_cast<std::uint8_t>((w >> 8) & 0xff));
    if (pad < 1) out.push_back(static_cast<std::uint8_t>(w & 0xff));
  }
  return out;
}

std::string encode_doubles(std::span<const double> values) {
  std::vector<std::uint8_t> bytes(values.size() * 8);
  for (std::size_t i = 0; i < values.size(); ++i) {
    const auto bits = std::bit_cast<std::uint64_t>(values[i]);
    for (int b = 0; b < 8; ++b) bytes[i * 8 + b] = static_cast<std::uint8_t>(bits >> (8 * b));
  }
  return base64_encode(bytes);
}

std::vector<double> decode_doubles(std::string_view text) {
  const auto bytes = base64_decode(text);
  if (bytes.size() % 8 != 0) throw Error("tensor payload is not a whole number of float64");
  std::vector<double> out(bytes.size() / 8);
  for (std::size_t i = 0; i < out.size(); ++i) {
    std::uint64_t bits = 0;
    for (int b = 0; b < 8; ++b) bits |= static_cast<std::uint64_t>(bytes[i * 8 + b]) << (8 * b);
    out[i] = std::bit_cast<double>(bits);
  }
  return out;
}

std::string model_to_json(const ShwModel& m, const ArtifactMeta& meta) {
  m.validate();
  json j;
  j["format"] = "shwmpc-model";
  j["version"] = kFormatVersion;
  j["meta"] = {{"config_hash", meta.config_hash}, {"seed", meta.seed}, {"kind", "shw-model"}};
  j["dims"] = {{"n_u", m.dims.n_u}, {"n_y", m.dims.n_y}, {"n_z", m.dims.n_z}, {"n_d", m.dims.n_d}};
  j["delta"] = m.delta;
  j["psi"] = bnn_to_json(m.psi);
  j["phi"] = bnn_to_json(m.phi);
  const PicnnArch& xa = m.xi.arch;
  j["xi"] = {{"xi_dim", xa.xi_dim},   {"eta_dim", xa.eta_dim}, {"out_dim", xa.out_dim},
             {"depth", xa.depth},     {"width", xa.width},     {"input_mask", xa.input_mask},
             {"theta", encode_doubles(m.xi.theta)}};
  j["dyn"] = {{"width", m.dyn.arch.width},
              {"a", encode_doubles(m.dyn.a)},
              {"b", encode_doubles(m.dyn.b)},
              {"c", encode_doubles(m.dyn.c)}};
  return j.dump(2) + "\n";
}

ShwModel model_from_json(const std::string& text, ArtifactMeta* meta) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw Error(std::string("model file: invalid JSON: ") + e.what());
  }
  try {
    if (j.at("format").get<std::string>() != "shwmpc-model") {
      throw Error("model file: not a structured H-W model document");
    }
    if (j.at("version").get<int>() != kFormatVersion) {
      throw Error("model file: unsupported version");
    }
    ShwModel m;
    const json& dm = j.at("dims");
    m.dims = {dm.at("n_u").get<int>(), dm.at("n_y").get<int>(), dm.at("n_z").get<int>(),
              dm.at("n_d").get<int>()};
    m.delta = j.at("delta").get<double>();
    m.psi = bnn_from_json(j.at("psi"));
    m.phi = bnn_from_json(j.at("phi"));
    const json& x = j.at("xi");
    m.xi.arch = {x.at("xi_dim").get<int>(), x.at("eta_dim").get<int>(),
                 x.at("out_dim").get<int>(), x.at("depth").get<int>(),
                 x.at("width").get<int>(),   x.at("input_mask").get<std::vector<double>>()};
    m.xi.arch.validate();
    m.xi.theta = decode_doubles(x.at("theta").get<std::string>());
    const json& dy = j.at("dyn");
    m.dyn.arch = {m.dims.n_y, m.dims.n_u, m.dims.n_d, dy.at("width").get<int>()};
    m.dyn.a = decode_doubles(dy.at("a").get<std::string>());
    m.dyn.b = decode_doubles(dy.at("b").get<std::string>());
    m.dyn.c = decode_doubles(dy.at("c").get<std::string>());
    m.validate();
    if (meta != nullptr) {
      const json& mt = j.at("meta");
      meta->config_hash = mt.at("config_hash").get<std::string>();
      meta->seed = mt.at("seed").get<std::uint64_t>();
      meta->kind = mt.at("kind").get<std::string>();
    }
    return m;
  } catch (const json::exception& e) {
    throw Error(std::string("model file: ") + e.what());
  }
}

std::string read_text_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error("cannot open '" + path + "'");
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error("cannot open '" + path + "' for writing");
  f << text;
  if (!f) throw Error("write to '" + path + "' failed");
}

void save_model(const std::string& path, const ShwModel& m, const ArtifactMeta& meta) {
  write_text_file(path, model_to_json(m, meta));
}

ShwModel load_model(const std::string& path, ArtifactMeta* meta) {
  return model_from_json(read_text_file(path), meta);
}

}  // namespace shwmpc
