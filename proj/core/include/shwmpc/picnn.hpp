#pragma once

// Partially input convex network Xi(xi, eta), convex in xi for every eta.
//
//   zeta^(i) = softplus( W_zeta^(i) (zeta^(i-1) .* softplus(v_zeta^(i)))
//                      + W_xi^(i) (xi .* v_xi^(i)) + v_eta^(i) )
//   eta^(i)  = softplus( W_eta^(i) eta^(i-1) + b_eta^(i) )      i < L
//   v_zeta^(i) = W_zeta_eta^(i) eta^(i-1) + b_zeta_eta^(i)
//   v_xi^(i)   = W_xi_eta^(i)   eta^(i-1) + b_xi_eta^(i)
//   v_eta^(i)  = W_eta_eta^(i)  eta^(i-1) + b_eta_eta^(i)
//   zeta^(0) = xi, eta^(0) = eta, output zeta^(L).
//
// W_zeta is stored as raw weights and used as softplus(raw) >= 0.

#include <cmath>
#include <random>
#include <span>
#include <vector>

#include "shwmpc/autodiff.hpp"
#include "shwmpc/error.hpp"
#include "shwmpc/linalg.hpp"

namespace shwmpc {

struct PicnnArch {
  int xi_dim = 1;
  int eta_dim = 0;
  int out_dim = 1;
  int depth = 2;
  int width = 16;
  // 1/0 per xi coordinate; a zero removes every path from that input (used
  // to make the constraint output independent of v).
  std::vector<double> input_mask;

  int zeta_dim(int i) const {  // width of zeta^(i)
    if (i == 0) return xi_dim;
    return i == depth ? out_dim : width;
  }
  int eta_width(int i) const { return i == 0 ? eta_dim : width; }

  struct LayerOffsets {
    std::size_t w_zeta, w_xi, w_zeta_eta, b_zeta_eta, w_xi_eta, b_xi_eta,
        w_eta_eta, b_eta_eta, w_eta, b_eta, end;
  };
  /// Offsets of layer i (1-based) relative to the start of that layer.
  LayerOffsets offsets(int i) const;
  std::size_t layer_params(int i) const { return offsets(i).end; }
  std::size_t layer_start(int i) const;
  std::size_t num_params() const { return layer_start(depth + 1); }

  double mask(int k) const { return input_mask.empty() ? 1.0 : input_mask[k]; }

  void validate() const;
};

struct PicnnParams {
  PicnnArch arch;
  std::vector<double> theta;

  /// Effective (nonnegative) W_zeta of layer i, row-major.
  std::vector<double> effective_w_zeta(int layer) const;
};

struct PicnnInit {
  double stddev = 0.05;
  // raw W_zeta ~ N(raw_zeta_mean, stddev); softplus(-3) ~ 0.05
  double raw_zeta_mean = -3.0;
  // Mean of the xi-path scale bias b_xi_eta, so the input enters at init.
  double xi_scale_mean = 1.0;
};

PicnnParams make_picnn(const PicnnArch& arch, std::mt19937_64& rng,
                       const PicnnInit& init = {});

template <class T>
struct PicnnEval {
  std::vector<T> out;
  std::vector<T> jac_xi;  // out_dim x xi_dim, row-major
};

template <class T>
PicnnEval<T> picnn_eval(const PicnnArch& arch, std::span<const T> theta,
                        std::span<const T> xi, std::span<const T> eta,
                        bool with_jac) {
  const int nx = arch.xi_dim;
  std::vector<T> xm(nx);
  for (int k = 0; k < nx; ++k) xm[k] = xi[k] * T(arch.mask(k));

  std::vector<T> zeta = xm;
  std::vector<T> tz;  // zeta_dim x nx
  if (with_jac) {
    tz.assign(static_cast<std::size_t>(nx) * nx, T(0.0));
    for (int k = 0; k < nx; ++k) tz[k * nx + k] = T(arch.mask(k));
  }
  std::vector<T> e(eta.begin(), eta.end());

  for (int i = 1; i <= arch.depth; ++i) {
    const auto off = arch.offsets(i);
    const T* base = theta.data() + arch.layer_start(i);
    const int hp = arch.zeta_dim(i - 1);
    const int h = arch.zeta_dim(i);
    const int ep = arch.eta_width(i - 1);

    auto affine = [&](std::size_t w_off, std::size_t b_off, int rows) {
      std::vector<T> v(rows);
      for (int r = 0; r < rows; ++r) {
        T acc = base[b_off + r];
        for (int c = 0; c < ep; ++c) acc += base[w_off + r * ep + c] * e[c];
        v[r] = acc;
      }
      return v;
    };
    std::vector<T> s_zeta = affine(off.w_zeta_eta, off.b_zeta_eta, hp);
    for (auto& s : s_zeta) s = softplus(s);
    std::vector<T> v_xi = affine(off.w_xi_eta, off.b_xi_eta, nx);
    std::vector<T> pre = affine(off.w_eta_eta, off.b_eta_eta, h);

    std::vector<T> wz(static_cast<std::size_t>(h) * hp);
    for (std::size_t k = 0; k < wz.size(); ++k) wz[k] = softplus(base[off.w_zeta + k]);

    std::vector<T> zs(hp);
    for (int c = 0; c < hp; ++c) zs[c] = zeta[c] * s_zeta[c];
    std::vector<T> xv(nx);
    for (int c = 0; c < nx; ++c) xv[c] = xm[c] * v_xi[c];
    for (int r = 0; r < h; ++r) {
      T acc = pre[r];
      for (int c = 0; c < hp; ++c) acc += wz[r * hp + c] * zs[c];
      for (int c = 0; c < nx; ++c) acc += base[off.w_xi + r * nx + c] * xv[c];
      pre[r] = acc;
    }

    std::vector<T> next(h);
    for (int r = 0; r < h; ++r) next[r] = softplus(pre[r]);
    if (with_jac) {
      std::vector<T> tn(static_cast<std::size_t>(h) * nx);
      for (int r = 0; r < h; ++r) {
        const T g = sigmoid(pre[r]);
        for (int k = 0; k < nx; ++k) {
          T acc = base[off.w_xi + r * nx + k] * v_xi[k] * T(arch.mask(k));
          for (int c = 0; c < hp; ++c) acc += wz[r * hp + c] * s_zeta[c] * tz[c * nx + k];
          tn[r * nx + k] = g * acc;
        }
      }
      tz = std::move(tn);
    }
    zeta = std::move(next);

    if (i < arch.depth) {
      const int en = arch.eta_width(i);
      std::vector<T> ne(en);
      for (int r = 0; r < en; ++r) {
        T acc = base[off.b_eta + r];
        for (int c = 0; c < ep; ++c) acc += base[off.w_eta + r * ep + c] * e[c];
        ne[r] = softplus(acc);
      }
      e = std::move(ne);
    }
  }
  PicnnEval<T> res;
  res.out = std::move(zeta);
  if (with_jac) res.jac_xi = std::move(tz);
  return res;
}

Vector picnn_forward(const PicnnParams& p, const Vector& xi, const Vector& eta);

/// d Xi / d xi, out_dim x xi_dim.
Matrix picnn_grad_xi(const PicnnParams& p, const Vector& xi, const Vector& eta);

/// Hessian of output `k` in xi by central differences of the analytic
/// gradient (symmetrized).
Matrix picnn_hessian_xi(const PicnnParams& p, const Vector& xi,
                        const Vector& eta, int k);

}  // namespace shwmpc
