#pragma once

#include <limits>
#include <random>

#include "shwmpc/shw_model.hpp"

namespace shwmpc::fixture {

/// Psi = Phi = identity, Xi with zero weights (constant output), A = a_diag I,
/// B = I, c = 0.
inline ShwModel identity_model(const ShwDims& dims, double a_diag = -1.0,
                               double delta = 0.1, int width = 4) {
  ShwArchConfig cfg;
  cfg.dims = dims;
  cfg.bnn_depth = 1;
  cfg.bnn_width = width;
  cfg.picnn_depth = 1;
  cfg.picnn_width = width;
  cfg.dyn_width = width;
  cfg.delta = delta;
  ShwInit init;
  init.psi.stddev = 0.0;
  init.phi.stddev = 0.0;
  init.dyn_stddev = 0.0;
  init.a_diag = a_diag;
  init.a_noise = init.b_noise = init.c_noise = 0.0;
  std::mt19937_64 rng(0);
  ShwModel m = make_shw_model(cfg, rng, init);
  for (double& w : m.xi.theta) w = 0.0;
  for (int i = 1; i <= m.xi.arch.depth; ++i) {
    const auto off = m.xi.arch.offsets(i);
    for (std::size_t k = off.w_zeta; k < off.w_xi; ++k) {
      m.xi.theta[m.xi.arch.layer_start(i) + k] = -std::numeric_limits<double>::infinity();
    }
  }
  return m;
}

/// Makes A, B, c independent of d with the given values.
inline void set_constant_dynamics(ShwModel& m, const Matrix& a, const Matrix& b,
                                  const Vector& c) {
  auto put = [](const TanhNetArch& net, std::vector<double>& theta, const Matrix& v) {
    theta.assign(net.num_params(), 0.0);
    const std::size_t off = net.num_params() - net.out;
    for (int i = 0; i < v.rows(); ++i)
      for (int j = 0; j < v.cols(); ++j) theta[off + i * v.cols() + j] = v(i, j);
  };
  put(m.dyn.arch.a_net(), m.dyn.a, a);
  put(m.dyn.arch.b_net(), m.dyn.b, b);
  put(m.dyn.arch.c_net(), m.dyn.c, c);
}

/// Random nonlinear model with stable A and well-conditioned B.
inline ShwModel random_model(std::mt19937_64& rng, const ShwDims& dims = {},
                             int width = 6, double delta = 0.1) {
  ShwArchConfig cfg;
  cfg.dims = dims;
  cfg.bnn_width = width;
  cfg.picnn_width = width;
  cfg.dyn_width = width;
  cfg.delta = delta;
  ShwInit init;
  init.psi = {0.3, 0.2};
  init.phi = {0.3, 0.1};
  init.xi = {0.5, -1.0, 1.0};
  init.dyn_stddev = 0.1;
  init.a_noise = 0.1;
  init.b_noise = 0.1;
  init.c_noise = 0.1;
  return make_shw_model(cfg, rng, init);
}

}  // namespace shwmpc::fixture
