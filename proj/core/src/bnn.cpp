#include "shwmpc/bnn.hpp"

#include <algorithm>
#include <limits>

namespace shwmpc {
namespace {

void check_dims(const BnnParams& p, const Vector& xi, const Vector& eta) {
  if (xi.size() != p.arch.xi_dim || eta.size() != p.arch.eta_dim) {
    std::ostringstream os;
    os << "bnn: expected xi dim " << p.arch.xi_dim << " and eta dim "
       << p.arch.eta_dim << ", got " << xi.size() << " and " << eta.size();
    throw DimensionError(os.str());
  }
  if (p.theta.size() != p.arch.num_params()) {
    throw DimensionError("bnn: parameter vector does not match architecture");
  }
}

std::span<const double> span_of(const Vector& v) {
  return {v.data(), static_cast<std::size_t>(v.size())};
}

Matrix omega_matrix(const BnnLayerValues<double>& lv, int n) {
  Matrix om(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) om(i, j) = lv.omega[i * n + j];
  return om;
}

}  // namespace

void BnnArch::validate() const {
  if (xi_dim < 1 || eta_dim < 0 || depth < 1 || width < 1) {
    throw DimensionError("bnn: dimensions must be positive and depth >= 1");
  }
  if (!diag_sign.empty()) {
    if (diag_sign.size() != static_cast<std::size_t>(depth * xi_dim)) {
      throw DimensionError("bnn: diag_sign must hold depth * xi_dim entries");
    }
    for (double s : diag_sign) {
      if (s != 1.0 && s != -1.0) throw Error("bnn: diag_sign entries must be +-1");
    }
  }
}

BnnParams make_bnn(const BnnArch& arch, std::mt19937_64& rng,
                   const BnnInit& init) {
  arch.validate();
  BnnParams p;
  p.arch = arch;
  p.theta.assign(arch.num_params(), 0.0);
  const TanhNetArch on = arch.omega_net();
  const TanhNetArch vn = arch.vec_net();
  std::normal_distribution<double> spread(0.0, 1.0);
  const int n = arch.xi_dim;
  for (int layer = 0; layer < arch.depth; ++layer) {
    std::span<double> all(p.theta);
    auto layer_span = all.subspan(arch.layer_params() * layer, arch.layer_params());
    std::vector<double> bias(on.out, 0.0);
    if (arch.variant == BnnVariant::kGeneral) {
      for (int k = 0; k < n; ++k) bias[k * n + k] = 1.0;
    }
    for (double& b : bias) b += init.omega_spread * spread(rng);
    on.init(layer_span.subspan(0, on.num_params()), rng, init.stddev, bias);
    vn.init(layer_span.subspan(on.num_params(), vn.num_params()), rng, init.stddev);
    vn.init(layer_span.subspan(on.num_params() + vn.num_params(), vn.num_params()),
            rng, init.stddev);
  }
  return p;
}

Vector bnn_forward(const BnnParams& p, const Vector& xi, const Vector& eta) {
  check_dims(p, xi, eta);
  const auto r = bnn_eval<double>(p.arch, p.theta, span_of(xi), span_of(eta), false);
  return Eigen::Map<const Vector>(r.out.data(), p.arch.xi_dim);
}

Vector bnn_inverse(const BnnParams& p, const Vector& xi_out, const Vector& eta) {
  check_dims(p, xi_out, eta);
  const int n = p.arch.xi_dim;
  Vector cur = xi_out;
  for (int layer = p.arch.depth - 1; layer >= 0; --layer) {
    const auto lv = bnn_layer_values<double>(p.arch, p.theta, layer, span_of(eta), false);
    Vector w(n);
    for (int i = 0; i < n; ++i) w(i) = asinh_sinh(cur(i), -lv.alpha[i]);
    for (int i = 0; i < n; ++i) w(i) -= lv.beta[i];
    const Matrix om = omega_matrix(lv, n);
    Eigen::PartialPivLU<Matrix> lu(om);
    const double det = lu.determinant();
    if (!(std::abs(det) > kOmegaDetFloor)) {
      std::ostringstream os;
      os << "bnn_inverse: Omega of layer " << layer << " is singular (|det| = "
         << std::abs(det) << ")";
      throw ConditioningError(os.str());
    }
    cur = lu.solve(w);
  }
  return cur;
}

Matrix bnn_jacobian(const BnnParams& p, const Vector& xi, const Vector& eta) {
  check_dims(p, xi, eta);
  const int n = p.arch.xi_dim;
  const double det = bnn_min_omega_det(p, eta);
  if (!(det > kOmegaDetFloor)) {
    std::ostringstream os;
    os << "bnn_jacobian: singular Omega (|det| = " << det << ")";
    throw ConditioningError(os.str());
  }
  const auto r = bnn_eval<double>(p.arch, p.theta, span_of(xi), span_of(eta), true);
  Matrix j(n, n);
  for (int a = 0; a < n; ++a)
    for (int b = 0; b < n; ++b) j(a, b) = r.jac_xi[a * n + b];
  return j;
}

Matrix bnn_jacobian_eta(const BnnParams& p, const Vector& xi, const Vector& eta) {
  check_dims(p, xi, eta);
  const int n = p.arch.xi_dim;
  const int m = p.arch.eta_dim;
  const auto r = bnn_eval<double>(p.arch, p.theta, span_of(xi), span_of(eta), true);
  Matrix j(n, m);
  for (int a = 0; a < n; ++a)
    for (int b = 0; b < m; ++b) j(a, b) = r.jac_eta[a * m + b];
  return j;
}

double bnn_min_omega_det(const BnnParams& p, const Vector& eta) {
  if (eta.size() != p.arch.eta_dim) throw DimensionError("bnn: eta dimension");
  double worst = std::numeric_limits<double>::infinity();
  for (int layer = 0; layer < p.arch.depth; ++layer) {
    const auto lv = bnn_layer_values<double>(p.arch, p.theta, layer, span_of(eta), false);
    worst = std::min(worst, std::abs(omega_matrix(lv, p.arch.xi_dim).determinant()));
  }
  return worst;
}

Vector asinh_sinh_activation(const Vector& xi, const Vector& alpha) {
  if (xi.size() != alpha.size()) throw DimensionError("activation: size mismatch");
  Vector out(xi.size());
  for (Eigen::Index i = 0; i < xi.size(); ++i) out(i) = asinh_sinh(xi(i), alpha(i));
  return out;
}

Vector asinh_sinh_activation_inverse(const Vector& w, const Vector& alpha) {
  return asinh_sinh_activation(w, -alpha);
}

Vector asinh_sinh_activation_derivative(const Vector& xi, const Vector& alpha) {
  if (xi.size() != alpha.size()) throw DimensionError("activation: size mismatch");
  Vector out(xi.size());
  for (Eigen::Index i = 0; i < xi.size(); ++i) out(i) = asinh_sinh_dxi(xi(i), alpha(i));
  return out;
}

}  // namespace shwmpc
