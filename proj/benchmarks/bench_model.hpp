#pragma once

#include <random>

#include "shwmpc/shw_model.hpp"

namespace shwmpc::bench {

inline ShwModel model(int width = 8, std::uint64_t seed = 1) {
  ShwArchConfig cfg;
  cfg.bnn_width = width;
  cfg.picnn_width = width;
  cfg.dyn_width = width;
  ShwInit init;
  init.psi = {0.3, 0.2};
  init.phi = {0.3, 0.1};
  init.xi = {0.5, -1.0, 1.0};
  init.dyn_stddev = 0.1;
  init.a_noise = 0.1;
  init.b_noise = 0.1;
  std::mt19937_64 rng(seed);
  return make_shw_model(cfg, rng, init);
}

}  // namespace shwmpc::bench
