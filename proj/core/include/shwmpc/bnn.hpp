#pragma once

// Bijective neural networks.
//
//   xi^(i) = phi(Omega^(i)(eta) xi^(i-1) + beta^(i)(eta), alpha^(i)(eta))
//   phi(s, a) = asinh(a + sinh s)
//
// Omega, beta and alpha are TanhNet conditioning networks of eta. In the
// diagonal variant Omega is diagonal with entries sign_k * exp(o_k), so each
// output coordinate depends on the matching input coordinate only and the
// map is monotone per coordinate.

#include <cmath>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "shwmpc/autodiff.hpp"
#include "shwmpc/dense_net.hpp"
#include "shwmpc/error.hpp"
#include "shwmpc/linalg.hpp"

namespace shwmpc {

enum class BnnVariant { kGeneral, kDiagonal };

/// |det Omega| at or below this is treated as singular.
inline constexpr double kOmegaDetFloor = 1e-12;

struct BnnArch {
  int xi_dim = 1;
  int eta_dim = 0;
  int depth = 1;
  int width = 16;
  BnnVariant variant = BnnVariant::kGeneral;
  // Diagonal variant: fixed sign of each Omega entry, depth * xi_dim values
  // of +-1 (empty means all +1).
  std::vector<double> diag_sign;

  TanhNetArch omega_net() const {
    const int n = xi_dim;
    return {eta_dim, width, variant == BnnVariant::kDiagonal ? n : n * n};
  }
  TanhNetArch vec_net() const { return {eta_dim, width, xi_dim}; }

  std::size_t layer_params() const {
    return omega_net().num_params() + 2 * vec_net().num_params();
  }
  std::size_t num_params() const { return layer_params() * depth; }

  double sign(int layer, int k) const {
    return diag_sign.empty() ? 1.0 : diag_sign[layer * xi_dim + k];
  }

  void validate() const;
};

struct BnnParams {
  BnnArch arch;
  std::vector<double> theta;
};

struct BnnInit {
  double stddev = 0.05;  // conditioning-network weights
  // Diagonal variant: spread of log|Omega_kk|; general: Omega bias = I +
  // N(0, omega_spread).
  double omega_spread = 0.0;
};

/// Random parameters near the identity map (Omega bias = I, beta = alpha = 0
/// plus noise).
BnnParams make_bnn(const BnnArch& arch, std::mt19937_64& rng,
                   const BnnInit& init = {});

/// Layer quantities evaluated at eta.
template <class T>
struct BnnLayerValues {
  std::vector<T> omega;      // n x n row-major (dense even for diagonal)
  std::vector<T> beta;       // n
  std::vector<T> alpha;      // n
  std::vector<T> d_omega;    // (n*n) x m, only with jacobians
  std::vector<T> d_beta;     // n x m
  std::vector<T> d_alpha;    // n x m
};

template <class T>
BnnLayerValues<T> bnn_layer_values(const BnnArch& arch, std::span<const T> theta,
                                   int layer, std::span<const T> eta,
                                   bool with_jac) {
  using std::exp;
  const int n = arch.xi_dim;
  const int m = arch.eta_dim;
  const TanhNetArch on = arch.omega_net();
  const TanhNetArch vn = arch.vec_net();
  const std::size_t base = arch.layer_params() * layer;
  auto slice = [&](std::size_t off, std::size_t len) { return theta.subspan(base + off, len); };

  BnnLayerValues<T> lv;
  std::vector<T> o(on.out);
  std::vector<T> jo;
  on.eval<T>(slice(0, on.num_params()), eta, o, with_jac ? &jo : nullptr);
  lv.beta.resize(n);
  lv.alpha.resize(n);
  vn.eval<T>(slice(on.num_params(), vn.num_params()), eta, lv.beta,
             with_jac ? &lv.d_beta : nullptr);
  vn.eval<T>(slice(on.num_params() + vn.num_params(), vn.num_params()), eta,
             lv.alpha, with_jac ? &lv.d_alpha : nullptr);

  lv.omega.assign(static_cast<std::size_t>(n) * n, T(0.0));
  if (arch.variant == BnnVariant::kGeneral) {
    lv.omega = o;
    if (with_jac) lv.d_omega = jo;
  } else {
    if (with_jac) lv.d_omega.assign(static_cast<std::size_t>(n) * n * m, T(0.0));
    for (int k = 0; k < n; ++k) {
      const T entry = T(arch.sign(layer, k)) * exp(o[k]);
      lv.omega[k * n + k] = entry;
      if (with_jac) {
        for (int j = 0; j < m; ++j) lv.d_omega[(k * n + k) * m + j] = entry * jo[k * m + j];
      }
    }
  }
  return lv;
}

template <class T>
struct BnnEval {
  std::vector<T> out;
  std::vector<T> jac_xi;   // n x n, row-major
  std::vector<T> jac_eta;  // n x m
};

/// Forward pass, optionally propagating the Jacobians with respect to xi
/// and eta alongside the values.
template <class T>
BnnEval<T> bnn_eval(const BnnArch& arch, std::span<const T> theta,
                    std::span<const T> xi, std::span<const T> eta,
                    bool with_jac) {
  const int n = arch.xi_dim;
  const int m = arch.eta_dim;
  const int cols = n + m;
  std::vector<T> cur(xi.begin(), xi.end());
  std::vector<T> tan;
  if (with_jac) {
    tan.assign(static_cast<std::size_t>(n) * cols, T(0.0));
    for (int k = 0; k < n; ++k) tan[k * cols + k] = T(1.0);
  }
  std::vector<T> pre(n);
  std::vector<T> tpre;
  for (int layer = 0; layer < arch.depth; ++layer) {
    const auto lv = bnn_layer_values<T>(arch, theta, layer, eta, with_jac);
    for (int i = 0; i < n; ++i) {
      T acc = lv.beta[i];
      if (arch.variant == BnnVariant::kDiagonal) {
        acc += lv.omega[i * n + i] * cur[i];
      } else {
        for (int j = 0; j < n; ++j) acc += lv.omega[i * n + j] * cur[j];
      }
      pre[i] = acc;
    }
    if (with_jac) {
      tpre.assign(static_cast<std::size_t>(n) * cols, T(0.0));
      for (int i = 0; i < n; ++i) {
        for (int c = 0; c < cols; ++c) {
          T acc(0.0);
          if (arch.variant == BnnVariant::kDiagonal) {
            acc = lv.omega[i * n + i] * tan[i * cols + c];
          } else {
            for (int j = 0; j < n; ++j) acc += lv.omega[i * n + j] * tan[j * cols + c];
          }
          if (c >= n) {
            const int e = c - n;
            for (int j = 0; j < n; ++j) {
              if (arch.variant == BnnVariant::kDiagonal && j != i) continue;
              acc += lv.d_omega[(i * n + j) * m + e] * cur[j];
            }
            acc += lv.d_beta[i * m + e];
          }
          tpre[i * cols + c] = acc;
        }
      }
    }
    for (int i = 0; i < n; ++i) {
      cur[i] = asinh_sinh(pre[i], lv.alpha[i]);
      if (with_jac) {
        const T gx = asinh_sinh_dxi(pre[i], lv.alpha[i]);
        const T ga = asinh_sinh_dalpha(pre[i], lv.alpha[i]);
        for (int c = 0; c < cols; ++c) {
          T v = gx * tpre[i * cols + c];
          if (c >= n) v += ga * lv.d_alpha[i * m + (c - n)];
          tan[i * cols + c] = v;
        }
      }
    }
  }
  BnnEval<T> res;
  res.out = std::move(cur);
  if (with_jac) {
    res.jac_xi.resize(static_cast<std::size_t>(n) * n);
    res.jac_eta.resize(static_cast<std::size_t>(n) * m);
    for (int i = 0; i < n; ++i) {
      for (int c = 0; c < n; ++c) res.jac_xi[i * n + c] = tan[i * cols + c];
      for (int e = 0; e < m; ++e) res.jac_eta[i * m + e] = tan[i * cols + n + e];
    }
  }
  return res;
}

// ---------------------------------------------------------------------------
// double API

Vector bnn_forward(const BnnParams& p, const Vector& xi, const Vector& eta);

/// Analytic layerwise inverse. Throws ConditioningError when some Omega has
/// |det| <= kOmegaDetFloor.
Vector bnn_inverse(const BnnParams& p, const Vector& xi_out, const Vector& eta);

/// d forward / d xi as the product of diag(phi') Omega layer factors.
Matrix bnn_jacobian(const BnnParams& p, const Vector& xi, const Vector& eta);

/// d forward / d eta.
Matrix bnn_jacobian_eta(const BnnParams& p, const Vector& xi, const Vector& eta);

/// Smallest |det Omega^(i)(eta)| over the layers.
double bnn_min_omega_det(const BnnParams& p, const Vector& eta);

/// Elementwise phi(xi, alpha) = asinh(alpha + sinh xi), its inverse
/// asinh(sinh w - alpha) and its derivative in xi.
Vector asinh_sinh_activation(const Vector& xi, const Vector& alpha);
Vector asinh_sinh_activation_inverse(const Vector& w, const Vector& alpha);
Vector asinh_sinh_activation_derivative(const Vector& xi, const Vector& alpha);

}  // namespace shwmpc
