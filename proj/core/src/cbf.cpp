#include "shwmpc/cbf.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include "shwmpc/dataset.hpp"
#include "shwmpc/error.hpp"

namespace shwmpc {
namespace {

Vector or_default(const Vector& v, int n, double value, const char* what) {
  if (v.size() == 0) return Vector::Constant(n, value);
  if (v.size() != n) throw ConfigError(std::string("CBF config: ") + what + " has the wrong length");
  return v;
}

std::span<const double> span_of(const Vector& v) {
  return {v.data(), static_cast<std::size_t>(v.size())};
}

StateConstraint xi_constraint(const ShwModel& m, const Vector& d_bar) {
  return [&m, d_bar](const Vector& x, Matrix* jac) {
    const int ny = m.dims.n_y, nu = m.dims.n_u, nz = m.dims.n_z;
    Vector xv = Vector::Zero(ny + nu);
    xv.head(ny) = x;
    const auto ev = picnn_eval<double>(m.xi.arch, m.xi.theta, span_of(xv), span_of(d_bar),
                                       jac != nullptr);
    if (jac != nullptr) {
      jac->resize(nz, ny);
      for (int i = 0; i < nz; ++i)
        for (int j = 0; j < ny; ++j) (*jac)(i, j) = ev.jac_xi[i * (ny + nu) + j];
    }
    return Vector(Eigen::Map<const Vector>(ev.out.data(), nz));
  };
}

}  // namespace

Equilibrium find_equilibrium(const ShwModel& m, const Vector& d_bar, const Vector& r_bar,
                             const Vector& u_lower, const Vector& u_upper) {
  m.validate();
  if (d_bar.size() != m.dims.n_d || r_bar.size() != m.dims.n_y) {
    throw DimensionError("find_equilibrium: dbar / rbar dimensions");
  }
  const int nu = m.dims.n_u;
  const Vector lo = or_default(u_lower, nu, -1.0, "u_lower");
  const Vector hi = or_default(u_upper, nu, 1.0, "u_upper");
  const DynValues dv = eval_dynamics(m, d_bar);
  Eigen::FullPivLU<Matrix> lu(dv.b);
  if (!lu.isInvertible()) {
    throw ModelUnsuitableError("find_equilibrium: B(dbar) is singular", dv.b.determinant());
  }
  Equilibrium eq;
  eq.d_bar = d_bar;
  eq.r_bar = r_bar;
  eq.x_bar = bnn_forward(m.phi, r_bar, d_bar);
  eq.v_bar = -lu.solve(dv.a * eq.x_bar + dv.c);
  try {
    eq.u_bar = bnn_inverse(m.psi, eq.v_bar, d_bar);
  } catch (const ConditioningError& e) {
    throw NotRealizableError(std::string("find_equilibrium: vbar is not invertible: ") +
                             e.what());
  }
  for (int i = 0; i < nu; ++i) {
    if (!(eq.u_bar(i) >= lo(i) && eq.u_bar(i) <= hi(i))) {
      std::ostringstream os;
      os << "target is not stationarily realizable: ubar(" << i << ") = " << eq.u_bar(i)
         << " outside [" << lo(i) << ", " << hi(i) << "]";
      throw NotRealizableError(os.str());
    }
  }
  return eq;
}

CbfController make_cbf_controller(const ShwModel& m, const Vector& d_bar, const Vector& r_bar,
                                  const CbfConfig& cfg) {
  if (!cfg.constraint && !xi_is_state_only(m)) {
    throw ModelUnsuitableError("CBF: Xi must not depend on v (state-only architecture)", 0.0);
  }
  const int ny = m.dims.n_y, nu = m.dims.n_u;
  CbfController c;
  c.u_lower = or_default(cfg.u_lower, nu, -1.0, "u_lower");
  c.u_upper = or_default(cfg.u_upper, nu, 1.0, "u_upper");
  if (!((c.u_upper - c.u_lower).minCoeff() > 0.0)) {
    throw ConfigError("CBF: u_lower must be strictly below u_upper");
  }
  c.eq = find_equilibrium(m, d_bar, r_bar, c.u_lower, c.u_upper);
  const DynValues dv = eval_dynamics(m, d_bar);
  c.a = dv.a;
  c.b = dv.b;
  c.c = dv.c;
  if (cfg.q.size() == 0) {
    const Matrix j = bnn_jacobian(m.phi, r_bar, d_bar);
    const Matrix gy = j.inverse();
    c.q = gy.transpose() * gy;
  } else {
    if (cfg.q.rows() != ny || cfg.q.cols() != ny) throw ConfigError("CBF: q must be n_y x n_y");
    c.q = cfg.q;
  }
  c.convention = cfg.convention;
  c.p = solve_care(c.a, c.b, c.q, cfg.convention);
  c.k = -c.b.transpose() * c.p;
  c.constraint = cfg.constraint ? cfg.constraint : xi_constraint(m, d_bar);
  const int nz = static_cast<int>(c.constraint(c.eq.x_bar, nullptr).size());
  c.gamma = or_default(cfg.gamma, nz, 1.0, "gamma");
  c.z_ceiling = or_default(cfg.z_ceiling, nz, 0.8, "z_ceiling");
  if (!(c.gamma.minCoeff() > 0.0)) throw ConfigError("CBF: gamma must be positive");
  const Vector va = bnn_forward(m.psi, c.u_lower, d_bar);
  const Vector vb = bnn_forward(m.psi, c.u_upper, d_bar);
  c.v_lower = va.cwiseMin(vb);
  c.v_upper = va.cwiseMax(vb);
  return c;
}

CbfStep cbf_filter_step(const CbfController& ctrl, const ShwModel& m, const Vector& x) {
  if (x.size() != ctrl.a.rows()) throw DimensionError("cbf_filter_step: x dimension");
  const int nv = static_cast<int>(ctrl.b.cols());
  CbfStep s;
  const Vector dx = x - ctrl.eq.x_bar;
  s.v_nominal = ctrl.eq.v_bar + ctrl.k * dx;
  Matrix jz;
  s.z = ctrl.constraint(x, &jz);
  const int nz = static_cast<int>(s.z.size());

  // min 1/2 |v|^2 - v_nom^T v  s.t. box, G v <= h. Channels with an
  // infinite ceiling contribute no row.
  std::vector<int> rows;
  for (int i = 0; i < nz; ++i) {
    if (std::isfinite(ctrl.z_ceiling(i))) rows.push_back(i);
  }
  const int nr = static_cast<int>(rows.size());
  const Vector drift = jz * (ctrl.a * dx - ctrl.b * ctrl.eq.v_bar);
  LinearInequalities lin{Matrix(nr, nv), Vector(nr)};
  for (int r = 0; r < nr; ++r) {
    const int i = rows[r];
    lin.g.row(r) = jz.row(i) * ctrl.b;
    lin.h(r) = ctrl.gamma(i) * (ctrl.z_ceiling(i) - s.z(i)) - drift(i);
  }
  QpResult qp;
  try {
    qp = solve_qp(Matrix::Identity(nv, nv), -s.v_nominal, ctrl.v_lower, ctrl.v_upper,
                  nr > 0 ? &lin : nullptr);
  } catch (const InfeasibleError& e) {
    throw InfeasibleError(std::string("CBF: admissible input set is empty: ") + e.what());
  }
  s.v = qp.x.cwiseMax(ctrl.v_lower).cwiseMin(ctrl.v_upper);
  s.u = bnn_inverse(m.psi, s.v, ctrl.eq.d_bar).cwiseMax(ctrl.u_lower).cwiseMin(ctrl.u_upper);
  s.barrier_active.assign(nz, false);
  for (int r = 0; r < nr; ++r) {
    const double slack = lin.h(r) - lin.g.row(r).dot(s.v);
    s.barrier_active[rows[r]] = slack <= 1e-9 * (1.0 + std::abs(lin.h(r)));
  }
  for (int i = 0; i < nv; ++i) {
    s.box_active.push_back(s.v(i) <= ctrl.v_lower(i) || s.v(i) >= ctrl.v_upper(i));
  }
  return s;
}

double lyapunov_derivative(const CbfController& ctrl, const Vector& x) {
  const Vector e = x - ctrl.eq.x_bar;
  const Vector edot = (ctrl.a + ctrl.b * ctrl.k) * e;
  return 2.0 * e.dot(ctrl.p * edot);
}

CbfTrajectory cbf_closed_loop(const CbfController& ctrl, const ShwModel& m, const Vector& x0,
                              int steps, int substeps) {
  if (steps < 0 || substeps < 1) throw ConfigError("cbf_closed_loop: bad step counts");
  const Vector z0 = ctrl.constraint(x0, nullptr);
  if ((z0 - ctrl.z_ceiling).maxCoeff() > 0.0) {
    std::ostringstream os;
    os << "cbf_closed_loop: initial state violates the z ceiling (max excess "
       << (z0 - ctrl.z_ceiling).maxCoeff() << ")";
    throw InfeasibleError(os.str());
  }
  const double h = m.delta / substeps;
  CbfTrajectory tr;
  auto excess = [&](const Vector& z) {
    double worst = -std::numeric_limits<double>::infinity();
    for (Eigen::Index i = 0; i < z.size(); ++i) {
      if (std::isfinite(ctrl.z_ceiling(i))) worst = std::max(worst, z(i) - ctrl.z_ceiling(i));
    }
    return worst;
  };
  tr.max_violation = excess(z0);
  Vector x = x0;
  for (int k = 0; k <= steps; ++k) {
    const CbfStep s = cbf_filter_step(ctrl, m, x);
    tr.t.push_back(k * m.delta);
    tr.x.push_back(x);
    tr.u.push_back(s.u);
    tr.v.push_back(s.v);
    tr.z.push_back(s.z);
    tr.barrier_active.push_back(s.barrier_active);
    if (k == steps) break;
    const Vector bv = ctrl.b * bnn_forward(m.psi, s.u, ctrl.eq.d_bar) + ctrl.c;
    auto f = [&](const Vector& xx) -> Vector { return ctrl.a * xx + bv; };
    for (int j = 0; j < substeps; ++j) {
      const Vector k1 = f(x);
      const Vector k2 = f(x + 0.5 * h * k1);
      const Vector k3 = f(x + 0.5 * h * k2);
      const Vector k4 = f(x + h * k3);
      x += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
      tr.max_violation = std::max(tr.max_violation, excess(ctrl.constraint(x, nullptr)));
    }
  }
  return tr;
}

void write_cbf_trajectory_csv(const std::string& path, const CbfTrajectory& tr,
                              const std::string& comment) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error("cannot open '" + path + "' for writing");
  if (!comment.empty()) f << "# " << comment << "\n";
  if (tr.t.empty()) return;
  const auto nx = tr.x[0].size(), nu = tr.u[0].size(), nz = tr.z[0].size();
  f << "t";
  for (Eigen::Index i = 1; i <= nx; ++i) f << ",x_" << i;
  for (Eigen::Index i = 1; i <= nu; ++i) f << ",u_" << i;
  for (Eigen::Index i = 1; i <= nu; ++i) f << ",v_" << i;
  for (Eigen::Index i = 1; i <= nz; ++i) f << ",z_" << i;
  for (Eigen::Index i = 1; i <= nz; ++i) f << ",active_" << i;
  f << "\n";
  for (std::size_t k = 0; k < tr.t.size(); ++k) {
    f << format_double(tr.t[k]);
    for (double v : tr.x[k]) f << ',' << format_double(v);
    for (double v : tr.u[k]) f << ',' << format_double(v);
    for (double v : tr.v[k]) f << ',' << format_double(v);
    for (double v : tr.z[k]) f << ',' << format_double(v);
    for (bool a : tr.barrier_active[k]) f << ',' << (a ? 1 : 0);
    f << "\n";
  }
  if (!f) throw Error("write to '" + path + "' failed");
}

Controller cbf_policy(const CbfController& ctrl, const ShwModel& m) {
  return [ctrl, &m](double, const Vector& y, const Vector&, const Vector&, const Vector&) {
    const Vector x = bnn_forward(m.phi, y, ctrl.eq.d_bar);
    return cbf_filter_step(ctrl, m, x).u;
  };
}

}  // namespace shwmpc
