#pragma once

#include <cmath>
#include <random>
#include <span>
#include <vector>

#include "shwmpc/autodiff.hpp"

namespace shwmpc {

/// out = W2 tanh(W1 in + b1) + b2.
///
/// Used for every conditioning network (BNN Omega/beta/alpha, A(d), B(d),
/// c(d)). Parameters are a flat span laid out as [W1 | b1 | W2 | b2] with
/// row-major weights.
struct TanhNetArch {
  int in = 0;
  int hidden = 0;
  int out = 0;

  std::size_t num_params() const {
    return static_cast<std::size_t>(hidden) * in + hidden +
           static_cast<std::size_t>(out) * hidden + out;
  }

  /// Writes N(0, stddev) weights and `out_bias` (+ N(0, stddev)) output
  /// biases into `theta`; an empty `out_bias` means zero.
  void init(std::span<double> theta, std::mt19937_64& rng, double stddev,
            std::span<const double> out_bias = {}) const {
    std::normal_distribution<double> dist(0.0, stddev);
    for (double& w : theta) w = dist(rng);
    if (!out_bias.empty()) {
      const std::size_t off = num_params() - out;
      for (int k = 0; k < out; ++k) theta[off + k] += out_bias[k];
    }
  }

  /// Evaluates the net; when `jac` is non-null it receives d out / d in
  /// (out x in, row-major).
  template <class T>
  void eval(std::span<const T> theta, std::span<const T> x, std::span<T> y,
            std::vector<T>* jac = nullptr) const {
    using std::tanh;
    const T* w1 = theta.data();
    const T* b1 = w1 + static_cast<std::size_t>(hidden) * in;
    const T* w2 = b1 + hidden;
    const T* b2 = w2 + static_cast<std::size_t>(out) * hidden;
    std::vector<T> h(hidden);
    for (int j = 0; j < hidden; ++j) {
      T acc = b1[j];
      for (int k = 0; k < in; ++k) acc += w1[j * in + k] * x[k];
      h[j] = tanh(acc);
    }
    for (int i = 0; i < out; ++i) {
      T acc = b2[i];
      for (int j = 0; j < hidden; ++j) acc += w2[i * hidden + j] * h[j];
      y[i] = acc;
    }
    if (jac == nullptr) return;
    jac->assign(static_cast<std::size_t>(out) * in, T(0.0));
    if (in == 0) return;
    // J = W2 diag(1 - h^2) W1
    std::vector<T> scaled(static_cast<std::size_t>(hidden) * in);
    for (int j = 0; j < hidden; ++j) {
      const T g = T(1.0) - h[j] * h[j];
      for (int k = 0; k < in; ++k) scaled[j * in + k] = g * w1[j * in + k];
    }
    for (int i = 0; i < out; ++i) {
      for (int k = 0; k < in; ++k) {
        T acc(0.0);
        for (int j = 0; j < hidden; ++j) acc += w2[i * hidden + j] * scaled[j * in + k];
        (*jac)[i * in + k] = acc;
      }
    }
  }
};

}  // namespace shwmpc
