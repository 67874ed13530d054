#include "shwmpc/shw_model.hpp"

#include <cmath>

namespace shwmpc {
namespace {

std::span<const double> span_of(const Vector& v) {
  return {v.data(), static_cast<std::size_t>(v.size())};
}

void require_dim(const Vector& v, int n, const char* what) {
  if (v.size() != n) {
    std::ostringstream os;
    os << what << ": expected dimension " << n << ", got " << v.size();
    throw DimensionError(os.str());
  }
}

Matrix net_matrix(const TanhNetArch& net, const std::vector<double>& theta,
                  const Vector& d, int rows, int cols) {
  std::vector<double> out(net.out);
  net.eval<double>(theta, span_of(d), out);
  Matrix mtx(rows, cols);
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j) mtx(i, j) = out[i * cols + j];
  return mtx;
}

}  // namespace

void ShwModel::validate() const {
  const auto& dm = dims;
  if (dm.n_u != dm.n_y) throw DimensionError("model: n_u must equal n_y");
  if (psi.arch.variant != BnnVariant::kDiagonal) {
    throw Error("model: Psi must be a diagonal BNN");
  }
  if (psi.arch.xi_dim != dm.n_u || psi.arch.eta_dim != dm.n_d ||
      phi.arch.xi_dim != dm.n_y || phi.arch.eta_dim != dm.n_d ||
      xi.arch.xi_dim != dm.n_y + dm.n_u || xi.arch.eta_dim != dm.n_d ||
      xi.arch.out_dim != dm.n_z || dyn.arch.n_y != dm.n_y ||
      dyn.arch.n_u != dm.n_u || dyn.arch.n_d != dm.n_d) {
    throw DimensionError("model: component dimensions disagree");
  }
  if (psi.theta.size() != psi.arch.num_params() ||
      phi.theta.size() != phi.arch.num_params() ||
      xi.theta.size() != xi.arch.num_params() ||
      dyn.a.size() != dyn.arch.a_net().num_params() ||
      dyn.b.size() != dyn.arch.b_net().num_params() ||
      dyn.c.size() != dyn.arch.c_net().num_params()) {
    throw DimensionError("model: parameter counts disagree with architecture");
  }
  if (!(delta > 0.0)) throw Error("model: sampling period must be positive");
}

ShwModel make_shw_model(const ShwArchConfig& cfg, std::mt19937_64& rng,
                        const ShwInit& init) {
  const ShwDims& dm = cfg.dims;
  ShwModel m;
  m.dims = dm;
  m.delta = cfg.delta;

  BnnArch psi_arch{dm.n_u, dm.n_d, cfg.bnn_depth, cfg.bnn_width,
                   BnnVariant::kDiagonal, {}};
  if (init.random_psi_signs) {
    std::bernoulli_distribution coin(0.5);
    // One sign per coordinate, applied to the first layer.
    psi_arch.diag_sign.assign(static_cast<std::size_t>(cfg.bnn_depth) * dm.n_u, 1.0);
    for (int k = 0; k < dm.n_u; ++k) psi_arch.diag_sign[k] = coin(rng) ? 1.0 : -1.0;
  }
  m.psi = make_bnn(psi_arch, rng, init.psi);
  m.phi = make_bnn({dm.n_y, dm.n_d, cfg.bnn_depth, cfg.bnn_width,
                    BnnVariant::kGeneral, {}},
                   rng, init.phi);

  PicnnArch xa{dm.n_y + dm.n_u, dm.n_d, dm.n_z, cfg.picnn_depth, cfg.picnn_width, {}};
  m.xi = make_picnn(xa, rng, init.xi);
  if (cfg.xi_state_only) make_xi_state_only(m);

  m.dyn.arch = {dm.n_y, dm.n_u, dm.n_d, cfg.dyn_width};
  std::normal_distribution<double> noise(0.0, 1.0);
  std::vector<double> a_bias(static_cast<std::size_t>(dm.n_y) * dm.n_y);
  for (int i = 0; i < dm.n_y; ++i)
    for (int j = 0; j < dm.n_y; ++j)
      a_bias[i * dm.n_y + j] = (i == j ? init.a_diag : 0.0) + init.a_noise * noise(rng);
  std::vector<double> b_bias(static_cast<std::size_t>(dm.n_y) * dm.n_u);
  for (int i = 0; i < dm.n_y; ++i)
    for (int j = 0; j < dm.n_u; ++j)
      b_bias[i * dm.n_u + j] = (i == j ? 1.0 : 0.0) + init.b_noise * noise(rng);
  std::vector<double> c_bias(dm.n_y);
  for (double& c : c_bias) c = init.c_noise * noise(rng);

  m.dyn.a.assign(m.dyn.arch.a_net().num_params(), 0.0);
  m.dyn.b.assign(m.dyn.arch.b_net().num_params(), 0.0);
  m.dyn.c.assign(m.dyn.arch.c_net().num_params(), 0.0);
  m.dyn.arch.a_net().init(m.dyn.a, rng, init.dyn_stddev, a_bias);
  m.dyn.arch.b_net().init(m.dyn.b, rng, init.dyn_stddev, b_bias);
  m.dyn.arch.c_net().init(m.dyn.c, rng, init.dyn_stddev, c_bias);
  m.validate();
  return m;
}

void make_xi_state_only(ShwModel& m) {
  m.xi.arch.input_mask.assign(m.xi.arch.xi_dim, 1.0);
  for (int k = m.dims.n_y; k < m.xi.arch.xi_dim; ++k) m.xi.arch.input_mask[k] = 0.0;
}

bool xi_is_state_only(const ShwModel& m) {
  if (m.xi.arch.input_mask.empty()) return false;
  for (int k = m.dims.n_y; k < m.xi.arch.xi_dim; ++k) {
    if (m.xi.arch.input_mask[k] != 0.0) return false;
  }
  return true;
}

DynValues eval_dynamics(const ShwModel& m, const Vector& d) {
  require_dim(d, m.dims.n_d, "eval_dynamics d");
  const auto& ar = m.dyn.arch;
  DynValues dv;
  dv.a = net_matrix(ar.a_net(), m.dyn.a, d, ar.n_y, ar.n_y);
  dv.b = net_matrix(ar.b_net(), m.dyn.b, d, ar.n_y, ar.n_u);
  dv.c = net_matrix(ar.c_net(), m.dyn.c, d, ar.n_y, 1);
  return dv;
}

Vector continuous_rhs(const ShwModel& m, const Vector& x, const Vector& u,
                      const Vector& d) {
  require_dim(x, m.dims.n_y, "continuous_rhs x");
  const DynValues dv = eval_dynamics(m, d);
  return dv.a * x + dv.b * bnn_forward(m.psi, u, d) + dv.c;
}

Vector eval_constraint(const ShwModel& m, const Vector& x, const Vector& v,
                       const Vector& d) {
  require_dim(x, m.dims.n_y, "eval_constraint x");
  require_dim(v, m.dims.n_u, "eval_constraint v");
  Vector xv(m.dims.n_y + m.dims.n_u);
  xv << x, v;
  return picnn_forward(m.xi, xv, d);
}

ModelOutputs eval_outputs(const ShwModel& m, const Vector& x, const Vector& u,
                          const Vector& d) {
  ModelOutputs o;
  o.v = bnn_forward(m.psi, u, d);
  o.y = bnn_inverse(m.phi, x, d);
  o.z = eval_constraint(m, x, o.v, d);
  return o;
}

Vector residual(const ShwModel& m, const Vector& u, const Vector& d,
                const Vector& y, const Vector& z, const Vector& ydot,
                const Vector& ddot) {
  require_dim(u, m.dims.n_u, "residual u");
  require_dim(d, m.dims.n_d, "residual d");
  require_dim(y, m.dims.n_y, "residual y");
  require_dim(z, m.dims.n_z, "residual z");
  require_dim(ydot, m.dims.n_y, "residual ydot");
  require_dim(ddot, m.dims.n_d, "residual ddot");
  ShwThetaView<double> th{m.psi.theta, m.phi.theta, m.xi.theta,
                          m.dyn.a,     m.dyn.b,     m.dyn.c};
  const auto e = residual_generic<double>(m, th, span_of(u), span_of(d), span_of(y),
                                          span_of(z), span_of(ydot), span_of(ddot));
  return Eigen::Map<const Vector>(e.data(), static_cast<Eigen::Index>(e.size()));
}

DiscreteModel discretize(const ShwModel& m, const Vector& d_bar) {
  require_dim(d_bar, m.dims.n_d, "discretize d_bar");
  const DynValues dv = eval_dynamics(m, d_bar);
  const DiscretePair dp = discretize_pair(dv.a, dv.b, dv.c, m.delta);
  const double scale = std::max(dp.b_d.cwiseAbs().maxCoeff(), 1e-300);
  const double det = dp.b_d.determinant();
  if (!(std::abs(det) > 1e-10 * std::pow(scale, m.dims.n_u))) {
    std::ostringstream os;
    os << "discretize: B_delta is singular (det = " << det
       << "); the model cannot be used for the convex OCP";
    throw ModelUnsuitableError(os.str(), det);
  }
  return {dp.a_d, dp.b_d, dp.c_d, d_bar};
}

DiscreteRollout simulate_discrete(const DiscreteModel& dm, const ShwModel& m,
                                  const Vector& x0, const std::vector<Vector>& u,
                                  const Vector& d_bar) {
  if (u.empty()) throw Error("simulate_discrete: horizon must be >= 1");
  require_dim(x0, m.dims.n_y, "simulate_discrete x0");
  DiscreteRollout r;
  r.x.push_back(x0);
  r.y.push_back(bnn_inverse(m.phi, x0, d_bar));
  for (const Vector& uk : u) {
    const Vector vk = bnn_forward(m.psi, uk, d_bar);
    const Vector& xk = r.x.back();
    r.v.push_back(vk);
    r.z.push_back(eval_constraint(m, xk, vk, d_bar));
    Vector next = dm.a_d * xk + dm.b_d * vk + dm.c_d;
    r.y.push_back(bnn_inverse(m.phi, next, d_bar));
    r.x.push_back(std::move(next));
  }
  return r;
}

}  // namespace shwmpc
