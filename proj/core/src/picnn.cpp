#include "shwmpc/picnn.hpp"

#include <sstream>

namespace shwmpc {
namespace {

std::span<const double> span_of(const Vector& v) {
  return {v.data(), static_cast<std::size_t>(v.size())};
}

void check_dims(const PicnnParams& p, const Vector& xi, const Vector& eta) {
  if (xi.size() != p.arch.xi_dim || eta.size() != p.arch.eta_dim) {
    std::ostringstream os;
    os << "picnn: expected xi dim " << p.arch.xi_dim << " and eta dim "
       << p.arch.eta_dim << ", got " << xi.size() << " and " << eta.size();
    throw DimensionError(os.str());
  }
  if (p.theta.size() != p.arch.num_params()) {
    throw DimensionError("picnn: parameter vector does not match architecture");
  }
}

}  // namespace

PicnnArch::LayerOffsets PicnnArch::offsets(int i) const {
  const std::size_t hp = zeta_dim(i - 1);
  const std::size_t h = zeta_dim(i);
  const std::size_t nx = xi_dim;
  const std::size_t ep = eta_width(i - 1);
  LayerOffsets o{};
  std::size_t at = 0;
  o.w_zeta = at;     at += h * hp;
  o.w_xi = at;       at += h * nx;
  o.w_zeta_eta = at; at += hp * ep;
  o.b_zeta_eta = at; at += hp;
  o.w_xi_eta = at;   at += nx * ep;
  o.b_xi_eta = at;   at += nx;
  o.w_eta_eta = at;  at += h * ep;
  o.b_eta_eta = at;  at += h;
  o.w_eta = at;
  if (i < depth) {
    const std::size_t en = eta_width(i);
    at += en * ep;
    o.b_eta = at;
    at += en;
  } else {
    o.b_eta = at;
  }
  o.end = at;
  return o;
}

std::size_t PicnnArch::layer_start(int i) const {
  std::size_t at = 0;
  for (int k = 1; k < i; ++k) at += layer_params(k);
  return at;
}

void PicnnArch::validate() const {
  if (xi_dim < 1 || eta_dim < 0 || out_dim < 1 || depth < 1 || width < 1) {
    throw DimensionError("picnn: dimensions must be positive and depth >= 1");
  }
  if (!input_mask.empty() && input_mask.size() != static_cast<std::size_t>(xi_dim)) {
    throw DimensionError("picnn: input_mask must have xi_dim entries");
  }
}

std::vector<double> PicnnParams::effective_w_zeta(int layer) const {
  const auto off = arch.offsets(layer);
  const std::size_t start = arch.layer_start(layer) + off.w_zeta;
  const std::size_t len = off.w_xi - off.w_zeta;
  std::vector<double> out(len);
  for (std::size_t k = 0; k < len; ++k) out[k] = softplus(theta[start + k]);
  return out;
}

PicnnParams make_picnn(const PicnnArch& arch, std::mt19937_64& rng,
                       const PicnnInit& init) {
  arch.validate();
  PicnnParams p;
  p.arch = arch;
  p.theta.assign(arch.num_params(), 0.0);
  std::normal_distribution<double> dist(0.0, init.stddev);
  for (double& w : p.theta) w = dist(rng);
  for (int i = 1; i <= arch.depth; ++i) {
    const auto off = arch.offsets(i);
    const std::size_t s = arch.layer_start(i);
    for (std::size_t k = off.w_zeta; k < off.w_xi; ++k) p.theta[s + k] += init.raw_zeta_mean;
    for (std::size_t k = off.b_xi_eta; k < off.w_eta_eta; ++k) p.theta[s + k] += init.xi_scale_mean;
  }
  return p;
}

Vector picnn_forward(const PicnnParams& p, const Vector& xi, const Vector& eta) {
  check_dims(p, xi, eta);
  const auto r = picnn_eval<double>(p.arch, p.theta, span_of(xi), span_of(eta), false);
  return Eigen::Map<const Vector>(r.out.data(), p.arch.out_dim);
}

Matrix picnn_grad_xi(const PicnnParams& p, const Vector& xi, const Vector& eta) {
  check_dims(p, xi, eta);
  const auto r = picnn_eval<double>(p.arch, p.theta, span_of(xi), span_of(eta), true);
  Matrix j(p.arch.out_dim, p.arch.xi_dim);
  for (int a = 0; a < p.arch.out_dim; ++a)
    for (int b = 0; b < p.arch.xi_dim; ++b) j(a, b) = r.jac_xi[a * p.arch.xi_dim + b];
  return j;
}

Matrix picnn_hessian_xi(const PicnnParams& p, const Vector& xi,
                        const Vector& eta, int k) {
  const int n = p.arch.xi_dim;
  Matrix h(n, n);
  const double step = 1e-5;
  for (int c = 0; c < n; ++c) {
    Vector plus = xi;
    Vector minus = xi;
    plus(c) += step;
    minus(c) -= step;
    h.col(c) = (picnn_grad_xi(p, plus, eta).row(k) -
                picnn_grad_xi(p, minus, eta).row(k)).transpose() / (2.0 * step);
  }
  return 0.5 * (h + h.transpose());
}

}  // namespace shwmpc
