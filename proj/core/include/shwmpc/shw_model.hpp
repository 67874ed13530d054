#pragma once

// Structured Hammerstein-Wiener model:
//
//   v  = Psi(u; d)              diagonal BNN
//   x' = A(d) x + B(d) v + c(d)
//   y  = Phi^{-1}(x; d)         BNN
//   z  = Xi(x, v; d)            PICNN, convex in (x, v)

#include <random>
#include <span>
#include <sstream>
#include <vector>

#include "shwmpc/bnn.hpp"
#include "shwmpc/dense_net.hpp"
#include "shwmpc/linalg.hpp"
#include "shwmpc/picnn.hpp"

namespace shwmpc {

struct ShwDims {
  int n_u = 3;
  int n_y = 3;
  int n_z = 1;
  int n_d = 2;
};

struct LinearDynArch {
  int n_y = 3;
  int n_u = 3;
  int n_d = 2;
  int width = 16;

  TanhNetArch a_net() const { return {n_d, width, n_y * n_y}; }
  TanhNetArch b_net() const { return {n_d, width, n_y * n_u}; }
  TanhNetArch c_net() const { return {n_d, width, n_y}; }
};

struct LinearDynParams {
  LinearDynArch arch;
  std::vector<double> a;
  std::vector<double> b;
  std::vector<double> c;
};

struct ShwModel {
  ShwDims dims;
  BnnParams psi;
  BnnParams phi;
  PicnnParams xi;
  LinearDynParams dyn;
  double delta = 0.1;

  /// Throws DimensionError/Error if the parts do not fit together.
  void validate() const;
  std::size_t num_params() const {
    return psi.theta.size() + phi.theta.size() + xi.theta.size() + dyn.a.size() +
           dyn.b.size() + dyn.c.size();
  }
};

struct ShwArchConfig {
  ShwDims dims;
  int bnn_depth = 2;
  int bnn_width = 16;
  int picnn_depth = 2;
  int picnn_width = 16;
  int dyn_width = 16;
  double delta = 0.1;
  // Removes the v-path from Xi (needed by the barrier-function controller).
  bool xi_state_only = false;
};

struct ShwInit {
  BnnInit psi;
  BnnInit phi;
  PicnnInit xi;
  double dyn_stddev = 0.05;
  double a_diag = -1.0;     // A(d) bias = a_diag I + N(0, a_noise)
  double a_noise = 0.05;
  double b_noise = 0.05;    // B(d) bias = I + N(0, b_noise)
  double c_noise = 0.0;
  // Random +-1 signs for the diagonal Psi entries (else all +1).
  bool random_psi_signs = false;
};

ShwModel make_shw_model(const ShwArchConfig& cfg, std::mt19937_64& rng,
                        const ShwInit& init = {});

/// Zeroes every Xi path from the v inputs by masking them out.
void make_xi_state_only(ShwModel& m);
bool xi_is_state_only(const ShwModel& m);

struct DynValues {
  Matrix a;
  Matrix b;
  Vector c;
};

DynValues eval_dynamics(const ShwModel& m, const Vector& d);

/// x' for the continuous model at (x, u, d).
Vector continuous_rhs(const ShwModel& m, const Vector& x, const Vector& u,
                      const Vector& d);

struct ModelOutputs {
  Vector v;
  Vector y;
  Vector z;
};

/// v = Psi(u; d), y = Phi^{-1}(x; d), z = Xi([x; v]; d).
ModelOutputs eval_outputs(const ShwModel& m, const Vector& x, const Vector& u,
                          const Vector& d);

/// z = Xi([x; v]; d).
Vector eval_constraint(const ShwModel& m, const Vector& x, const Vector& v,
                       const Vector& d);

/// Prediction error of one record with x and v eliminated:
///   [ y' - (dPhi/dy)^{-1}(A Phi + B Psi + c - dPhi/dd d') ;
///     z  - Xi(Phi, Psi; d) ]
Vector residual(const ShwModel& m, const Vector& u, const Vector& d,
                const Vector& y, const Vector& z, const Vector& ydot,
                const Vector& ddot);

struct DiscreteModel {
  Matrix a_d;
  Matrix b_d;
  Vector c_d;
  Vector d_ref;
};

/// Zero-order-hold discretization at d_bar. Throws ModelUnsuitableError when
/// B_delta is singular.
DiscreteModel discretize(const ShwModel& m, const Vector& d_bar);

struct DiscreteRollout {
  std::vector<Vector> x;  // x_0 .. x_n
  std::vector<Vector> y;  // y_0 .. y_n
  std::vector<Vector> v;  // v_0 .. v_{n-1}
  std::vector<Vector> z;  // z_0 .. z_{n-1}
};

DiscreteRollout simulate_discrete(const DiscreteModel& dm, const ShwModel& m,
                                  const Vector& x0, const std::vector<Vector>& u,
                                  const Vector& d_bar);

// ---------------------------------------------------------------------------
// Generic residual, shared by the double path and the AD path used in
// identification.

template <class T>
struct ShwThetaView {
  std::span<const T> psi;
  std::span<const T> phi;
  std::span<const T> xi;
  std::span<const T> a;
  std::span<const T> b;
  std::span<const T> c;
};

/// Dense solve with partial pivoting on values; throws ConditioningError
/// when a pivot falls to or below `floor`.
template <class T>
std::vector<T> small_lu_solve(std::vector<T> a, std::vector<T> rhs, int n,
                              double floor = 1e-12) {
  using std::abs;
  for (int col = 0; col < n; ++col) {
    int piv = col;
    double best = std::abs(value_of(a[col * n + col]));
    for (int r = col + 1; r < n; ++r) {
      const double v = std::abs(value_of(a[r * n + col]));
      if (v > best) {
        best = v;
        piv = r;
      }
    }
    if (!(best > floor)) {
      std::ostringstream os;
      os << "singular Jacobian (pivot " << best << ")";
      throw ConditioningError(os.str());
    }
    if (piv != col) {
      for (int k = 0; k < n; ++k) std::swap(a[col * n + k], a[piv * n + k]);
      std::swap(rhs[col], rhs[piv]);
    }
    for (int r = col + 1; r < n; ++r) {
      const T f = a[r * n + col] / a[col * n + col];
      for (int k = col + 1; k < n; ++k) a[r * n + k] -= f * a[col * n + k];
      rhs[r] -= f * rhs[col];
    }
  }
  std::vector<T> x(n);
  for (int r = n - 1; r >= 0; --r) {
    T acc = rhs[r];
    for (int k = r + 1; k < n; ++k) acc -= a[r * n + k] * x[k];
    x[r] = acc / a[r * n + r];
  }
  return x;
}

template <class T>
std::vector<T> residual_generic(const ShwModel& m, const ShwThetaView<T>& th,
                                std::span<const T> u, std::span<const T> d,
                                std::span<const T> y, std::span<const T> z,
                                std::span<const T> ydot,
                                std::span<const T> ddot) {
  const int ny = m.dims.n_y;
  const int nu = m.dims.n_u;
  const int nd = m.dims.n_d;
  const int nz = m.dims.n_z;

  const auto phi = bnn_eval<T>(m.phi.arch, th.phi, y, d, true);
  const auto psi = bnn_eval<T>(m.psi.arch, th.psi, u, d, false);

  std::vector<T> a(static_cast<std::size_t>(ny) * ny);
  std::vector<T> b(static_cast<std::size_t>(ny) * nu);
  std::vector<T> c(ny);
  m.dyn.arch.a_net().eval<T>(th.a, d, a);
  m.dyn.arch.b_net().eval<T>(th.b, d, b);
  m.dyn.arch.c_net().eval<T>(th.c, d, c);

  std::vector<T> rhs(ny);
  for (int i = 0; i < ny; ++i) {
    T acc = c[i];
    for (int k = 0; k < ny; ++k) acc += a[i * ny + k] * phi.out[k];
    for (int k = 0; k < nu; ++k) acc += b[i * nu + k] * psi.out[k];
    for (int k = 0; k < nd; ++k) acc -= phi.jac_eta[i * nd + k] * ddot[k];
    rhs[i] = acc;
  }
  const std::vector<T> s = small_lu_solve<T>(phi.jac_xi, rhs, ny);

  std::vector<T> xv(ny + nu);
  for (int k = 0; k < ny; ++k) xv[k] = phi.out[k];
  for (int k = 0; k < nu; ++k) xv[ny + k] = psi.out[k];
  const auto zhat = picnn_eval<T>(m.xi.arch, th.xi, xv, d, false);

  std::vector<T> e(ny + nz);
  for (int i = 0; i < ny; ++i) e[i] = ydot[i] - s[i];
  for (int i = 0; i < nz; ++i) e[ny + i] = z[i] - zhat.out[i];
  return e;
}

}  // namespace shwmpc
