#include "shwmpc/ocp.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <random>
#include <sstream>

#include "shwmpc/dataset.hpp"
#include "shwmpc/error.hpp"
#include "shwmpc/parallel.hpp"

namespace shwmpc {
namespace {

Vector or_default(const Vector& v, int n, double value) {
  if (v.size() == 0) return Vector::Constant(n, value);
  if (v.size() != n) throw ConfigError("OCP config: vector has the wrong length");
  return v;
}

std::span<const double> span_of(const Vector& v) {
  return {v.data(), static_cast<std::size_t>(v.size())};
}

bool at_bound(double x, double b) { return std::abs(x - b) <= 1e-12 * (1.0 + std::abs(b)); }

void snap_to_box(Vector& v, const Vector& lo, const Vector& hi) {
  v = v.cwiseMax(lo).cwiseMin(hi);
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    if (at_bound(v(i), lo(i))) v(i) = lo(i);
    if (at_bound(v(i), hi(i))) v(i) = hi(i);
  }
}

// Rows of d(x_k, v_k)/dV for stage k.
Matrix stage_map(const OcpInstance& inst, int k) {
  const int ny = inst.model->dims.n_y;
  const int nu = inst.model->dims.n_u;
  Matrix j = Matrix::Zero(ny + nu, inst.n_v());
  if (k > 0) j.topRows(ny) = inst.stacked.b_bar.middleRows((k - 1) * ny, ny);
  j.block(ny, k * nu, nu, nu).setIdentity();
  return j;
}

// Quadratic-model regularization so the QP sees a positive definite H.
Matrix make_pd(const Matrix& h) {
  Matrix s = 0.5 * (h + h.transpose());
  const double scale = std::max(1.0, s.diagonal().cwiseAbs().maxCoeff());
  double shift = 0.0;
  for (int attempt = 0; attempt < 30; ++attempt) {
    Matrix t = s;
    t.diagonal().array() += shift;
    Eigen::LLT<Matrix> llt(t);
    if (llt.info() == Eigen::Success) return t;
    shift = shift == 0.0 ? 1e-12 * scale : shift * 10.0;
  }
  throw SolverError("OCP: Hessian could not be regularized");
}

}  // namespace

Matrix build_q(const ShwModel& m, const Vector& x0, const Vector& d_bar, int n) {
  if (n < 1) throw Error("build_q: horizon must be >= 1");
  const Vector y0 = bnn_inverse(m.phi, x0, d_bar);
  const Matrix j = bnn_jacobian(m.phi, y0, d_bar);
  Eigen::FullPivLU<Matrix> lu(j);
  if (!lu.isInvertible()) throw ConditioningError("build_q: dPhi/dy is singular");
  const Matrix grad_y = lu.inverse();
  const Matrix q0 = grad_y.transpose() * grad_y;
  const int ny = m.dims.n_y;
  Matrix q = Matrix::Zero(n * ny, n * ny);
  for (int k = 0; k < n; ++k) q.block(k * ny, k * ny, ny, ny) = q0;
  Eigen::LLT<Matrix> llt(q0);
  if (llt.info() != Eigen::Success) throw ConditioningError("build_q: Q0 is not positive definite");
  return q;
}

StackedAffine build_stacked(const DiscreteModel& dm, int n) {
  if (n < 1) throw Error("build_stacked: horizon must be >= 1");
  const int ny = static_cast<int>(dm.a_d.rows());
  const int nu = static_cast<int>(dm.b_d.cols());
  StackedAffine s;
  s.a_bar = Matrix::Zero(n * ny, ny);
  s.b_bar = Matrix::Zero(n * ny, n * nu);
  s.c_bar = Vector::Zero(n * ny);
  // powers[i] = A^i B
  std::vector<Matrix> ab(n);
  ab[0] = dm.b_d;
  for (int i = 1; i < n; ++i) ab[i] = dm.a_d * ab[i - 1];
  Matrix apow = dm.a_d;
  Vector csum = dm.c_d;
  for (int k = 0; k < n; ++k) {
    s.a_bar.middleRows(k * ny, ny) = apow;
    s.c_bar.segment(k * ny, ny) = csum;
    for (int j = 0; j <= k; ++j) s.b_bar.block(k * ny, j * nu, ny, nu) = ab[k - j];
    apow = dm.a_d * apow;
    csum = dm.a_d * csum + dm.c_d;
  }
  return s;
}

OcpInstance make_instance(const ShwModel& m, const Vector& x0, const Vector& d_bar,
                          const Vector& r_bar, const OcpConfig& cfg) {
  m.validate();
  if (cfg.horizon < 1) throw ConfigError("OCP horizon must be >= 1");
  if (x0.size() != m.dims.n_y || r_bar.size() != m.dims.n_y || d_bar.size() != m.dims.n_d) {
    throw DimensionError("make_instance: x0 / rbar / dbar dimensions");
  }
  OcpInstance inst;
  inst.model = &m;
  inst.n = cfg.horizon;
  inst.x0 = x0;
  inst.d_bar = d_bar;
  inst.r_bar = r_bar;
  inst.dm = discretize(m, d_bar);
  inst.stacked = build_stacked(inst.dm, inst.n);
  inst.x_ref = bnn_forward(m.phi, r_bar, d_bar);
  inst.q = build_q(m, x0, d_bar, inst.n);
  const int nu = m.dims.n_u;
  inst.u_lower = or_default(cfg.u_lower, nu, -1.0);
  inst.u_upper = or_default(cfg.u_upper, nu, 1.0);
  if (!((inst.u_upper - inst.u_lower).minCoeff() > 0.0)) {
    throw ConfigError("OCP: u_lower must be strictly below u_upper");
  }
  const Vector va = bnn_forward(m.psi, inst.u_lower, d_bar);
  const Vector vb = bnn_forward(m.psi, inst.u_upper, d_bar);
  const Vector vlo = va.cwiseMin(vb), vhi = va.cwiseMax(vb);
  inst.v_lower = vlo.replicate(inst.n, 1);
  inst.v_upper = vhi.replicate(inst.n, 1);
  inst.z_weight = or_default(cfg.z_weight, m.dims.n_z, 1.0);
  inst.z_ceiling = or_default(cfg.z_ceiling, m.dims.n_z, 0.8);
  if (inst.z_weight.minCoeff() < 0.0) throw ConfigError("OCP: z weights must be >= 0");
  inst.z_penalty = cfg.z_penalty && !cfg.hard_z;
  inst.hard_z = cfg.hard_z;
  inst.f_u = cfg.f_u;
  inst.max_iterations = cfg.max_iterations;
  inst.tolerance = cfg.tolerance;
  return inst;
}

std::vector<Vector> stage_states(const OcpInstance& inst, const Vector& v) {
  const int ny = inst.model->dims.n_y;
  const Vector x = inst.stacked.a_bar * inst.x0 + inst.stacked.b_bar * v + inst.stacked.c_bar;
  std::vector<Vector> out(inst.n);
  out[0] = inst.x0;
  for (int k = 1; k < inst.n; ++k) out[k] = x.segment((k - 1) * ny, ny);
  return out;
}

std::vector<Vector> stage_z(const OcpInstance& inst, const Vector& v) {
  const ShwModel& m = *inst.model;
  const auto xs = stage_states(inst, v);
  std::vector<Vector> z(inst.n);
  for (int k = 0; k < inst.n; ++k) {
    z[k] = eval_constraint(m, xs[k], v.segment(k * m.dims.n_u, m.dims.n_u), inst.d_bar);
  }
  return z;
}

double objective(const OcpInstance& inst, const Vector& v, Vector* grad, Matrix* hess,
                 ObjectiveTrace* trace, const std::vector<int>* stage_order) {
  const ShwModel& m = *inst.model;
  if (v.size() != inst.n_v()) throw DimensionError("objective: V has the wrong length");
  const int ny = m.dims.n_y, nu = m.dims.n_u, nz = m.dims.n_z;
  const StackedAffine& s = inst.stacked;

  // Whole-horizon state from one matrix product; no recursion.
  const Vector x = s.a_bar * inst.x0 + s.b_bar * v + s.c_bar;
  const Vector e = x - inst.x_ref.replicate(inst.n, 1);
  const Vector qe = inst.q * e;
  double f = e.dot(qe);
  if (grad != nullptr) *grad = 2.0 * s.b_bar.transpose() * qe;
  if (hess != nullptr) *hess = 2.0 * s.b_bar.transpose() * inst.q * s.b_bar;
  if (inst.f_u) f += inst.f_u(v, grad, hess);

  if (!inst.z_penalty) return f;
  std::vector<int> order(inst.n);
  std::iota(order.begin(), order.end(), 0);
  if (stage_order != nullptr) order = *stage_order;

  Vector xv(ny + nu);
  for (int k : order) {
    xv.head(ny) = k == 0 ? inst.x0 : Vector(x.segment((k - 1) * ny, ny));
    xv.tail(nu) = v.segment(k * nu, nu);
    const bool need_jac = grad != nullptr || hess != nullptr;
    const auto ev = picnn_eval<double>(m.xi.arch, m.xi.theta, span_of(xv), span_of(inst.d_bar),
                                       need_jac);
    if (trace != nullptr) {
      ++trace->xi_calls;
      trace->stage_order.push_back(k);
    }
    for (int j = 0; j < nz; ++j) {
      const double w = inst.z_weight(j);
      const double sl = ev.out[j] - inst.z_ceiling(j);
      if (w == 0.0 || sl <= 0.0) continue;
      f += w * sl * sl * sl;
      if (!need_jac) continue;
      const Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>
          jac(ev.jac_xi.data(), nz, ny + nu);
      const Vector gz = jac.row(j).transpose();
      const Matrix jm = stage_map(inst, k);
      const double d1 = 3.0 * w * sl * sl;
      if (grad != nullptr) *grad += d1 * (jm.transpose() * gz);
      if (hess != nullptr) {
        const Matrix hz = picnn_hessian_xi(m.xi, xv, inst.d_bar, j);
        const Matrix inner = 6.0 * w * sl * gz * gz.transpose() + d1 * hz;
        *hess += jm.transpose() * inner * jm;
      }
    }
  }
  return f;
}

double fischer_burmeister(double a, double b) { return a + b - std::hypot(a, b); }

Vector kkt_residual(const OcpInstance& inst, const Vector& v, const Vector& lambda) {
  const int nv = inst.n_v();
  if (lambda.size() != 2 * nv) throw DimensionError("kkt_residual: lambda must have 2 n n_u entries");
  Vector grad;
  objective(inst, v, &grad);
  Vector f(3 * nv);
  f.head(nv) = grad - lambda.head(nv) + lambda.tail(nv);
  for (int i = 0; i < nv; ++i) {
    f(nv + i) = fischer_burmeister(lambda(i), v(i) - inst.v_lower(i));
    f(2 * nv + i) = fischer_burmeister(lambda(nv + i), inst.v_upper(i) - v(i));
  }
  return f;
}

Vector estimate_multipliers(const OcpInstance& inst, const Vector& v, const Vector& grad) {
  const int nv = inst.n_v();
  Vector lambda = Vector::Zero(2 * nv);
  for (int i = 0; i < nv; ++i) {
    if (at_bound(v(i), inst.v_lower(i))) lambda(i) = std::max(grad(i), 0.0);
    if (at_bound(v(i), inst.v_upper(i))) lambda(nv + i) = std::max(-grad(i), 0.0);
  }
  return lambda;
}

namespace {

OcpSolution finish(const OcpInstance& inst, const Vector& v, const Vector& lambda, double f,
                   double res, int it) {
  const ShwModel& m = *inst.model;
  const int nu = m.dims.n_u;
  OcpSolution sol;
  sol.v = v;
  sol.lambda = lambda;
  sol.objective = f;
  sol.kkt_residual_inf = res;
  sol.iterations = it;
  sol.u.resize(inst.n_v());
  for (int k = 0; k < inst.n; ++k) {
    const Vector uk = bnn_inverse(m.psi, v.segment(k * nu, nu), inst.d_bar);
    sol.u.segment(k * nu, nu) = uk.cwiseMax(inst.u_lower).cwiseMin(inst.u_upper);
  }
  const auto z = stage_z(inst, v);
  sol.z_max = z[0];
  for (const Vector& zk : z) sol.z_max = sol.z_max.cwiseMax(zk);
  return sol;
}

OcpSolution solve_soft(const OcpInstance& inst, Vector v) {
  Vector grad;
  Matrix hess;
  double res = std::numeric_limits<double>::infinity();
  for (int it = 0; it <= inst.max_iterations; ++it) {
    const double f = objective(inst, v, &grad, &hess);
    const Vector lambda = estimate_multipliers(inst, v, grad);
    Vector fr(3 * inst.n_v());
    fr.head(inst.n_v()) = grad - lambda.head(inst.n_v()) + lambda.tail(inst.n_v());
    fr.tail(2 * inst.n_v()).setZero();  // zero by construction of lambda
    res = fr.cwiseAbs().maxCoeff();
    if (res <= inst.tolerance) return finish(inst, v, lambda, f, res, it);
    if (it == inst.max_iterations) break;

    const QpResult qp = solve_qp(make_pd(hess), grad, inst.v_lower - v, inst.v_upper - v);
    const Vector d = qp.x;
    const double slope = grad.dot(d);
    double alpha = 1.0;
    Vector trial;
    bool accepted = false;
    for (int ls = 0; ls < 60; ++ls, alpha *= 0.5) {
      trial = v + alpha * d;
      snap_to_box(trial, inst.v_lower, inst.v_upper);
      const double ft = objective(inst, trial);
      if (ft <= f + 1e-4 * alpha * slope + 1e-15 * std::abs(f)) {
        accepted = true;
        break;
      }
    }
    if (!accepted) break;
    v = trial;
  }
  std::ostringstream os;
  os << "OCP: no convergence within " << inst.max_iterations << " iterations (KKT residual "
     << res << ")";
  throw SolverError(os.str(), res);
}

// Hard z ceilings: SQP on the linearized constraints with an l1 merit.
OcpSolution solve_hard(const OcpInstance& inst, Vector v) {
  const ShwModel& m = *inst.model;
  const int ny = m.dims.n_y, nu = m.dims.n_u, nz = m.dims.n_z;
  const int nv = inst.n_v();
  const int nc = inst.n * nz;
  Vector mu = Vector::Zero(nc);
  double rho = 10.0;
  double res = std::numeric_limits<double>::infinity();

  auto constraints = [&](const Vector& vv, Matrix* jac) {
    Vector c(nc);
    if (jac != nullptr) jac->setZero(nc, nv);
    const auto xs = stage_states(inst, vv);
    Vector xv(ny + nu);
    for (int k = 0; k < inst.n; ++k) {
      xv << xs[k], vv.segment(k * nu, nu);
      const auto ev = picnn_eval<double>(m.xi.arch, m.xi.theta, span_of(xv),
                                         span_of(inst.d_bar), jac != nullptr);
      for (int j = 0; j < nz; ++j) {
        c(k * nz + j) = ev.out[j] - inst.z_ceiling(j);
        if (jac != nullptr) {
          Vector gz(ny + nu);
          for (int t = 0; t < ny + nu; ++t) gz(t) = ev.jac_xi[j * (ny + nu) + t];
          jac->row(k * nz + j) = (stage_map(inst, k).transpose() * gz).transpose();
        }
      }
    }
    return c;
  };
  auto merit = [&](const Vector& vv) {
    return objective(inst, vv) + rho * constraints(vv, nullptr).cwiseMax(0.0).sum();
  };

  for (int it = 0; it <= inst.max_iterations; ++it) {
    Vector grad;
    Matrix hess;
    const double f = objective(inst, v, &grad, &hess);
    Matrix cj;
    const Vector c = constraints(v, &cj);
    // KKT residual with the current multipliers.
    const Vector stat_no_box = grad + cj.transpose() * mu;
    const Vector lambda = estimate_multipliers(inst, v, stat_no_box);
    const Vector stat = stat_no_box - lambda.head(nv) + lambda.tail(nv);
    double comp = 0.0;
    for (int i = 0; i < nc; ++i) comp = std::max(comp, std::abs(fischer_burmeister(mu(i), -c(i))));
    res = std::max(stat.cwiseAbs().maxCoeff(), comp);
    if (res <= inst.tolerance) return finish(inst, v, lambda, f, res, it);
    if (it == inst.max_iterations) break;

    Matrix hl = hess;
    const auto xs = stage_states(inst, v);
    Vector xv(ny + nu);
    for (int k = 0; k < inst.n; ++k) {
      xv << xs[k], v.segment(k * nu, nu);
      for (int j = 0; j < nz; ++j) {
        if (mu(k * nz + j) <= 0.0) continue;
        const Matrix jm = stage_map(inst, k);
        hl += mu(k * nz + j) * jm.transpose() * picnn_hessian_xi(m.xi, xv, inst.d_bar, j) * jm;
      }
    }
    LinearInequalities lin{cj, -c};
    QpResult qp;
    try {
      qp = solve_qp(make_pd(hl), grad, inst.v_lower - v, inst.v_upper - v, &lin);
    } catch (const InfeasibleError& e) {
      throw InfeasibleError(std::string("OCP: z ceiling cannot be met: ") + e.what());
    }
    const Vector d = qp.x;
    rho = std::max(rho, 2.0 * qp.mu_ineq.cwiseAbs().maxCoeff());
    const double m0 = merit(v);
    const double dir = grad.dot(d) - rho * c.cwiseMax(0.0).sum();
    double alpha = 1.0;
    Vector trial;
    bool accepted = false;
    for (int ls = 0; ls < 60; ++ls, alpha *= 0.5) {
      trial = v + alpha * d;
      snap_to_box(trial, inst.v_lower, inst.v_upper);
      if (merit(trial) <= m0 + 1e-4 * alpha * std::min(dir, 0.0) + 1e-15 * std::abs(m0)) {
        accepted = true;
        break;
      }
    }
    if (!accepted) break;
    v = trial;
    mu = qp.mu_ineq;
  }
  std::ostringstream os;
  os << "OCP (hard z): no convergence within " << inst.max_iterations
     << " iterations (KKT residual " << res << ")";
  throw SolverError(os.str(), res);
}

}  // namespace

OcpSolution solve(const OcpInstance& inst, const Vector& v_init) {
  if (inst.model == nullptr) throw Error("solve: instance has no model");
  if (v_init.size() != inst.n_v()) throw DimensionError("solve: V_init has the wrong length");
  if (!((inst.v_upper - inst.v_lower).minCoeff() > 0.0)) {
    throw ConfigError("solve: empty input box");
  }
  Vector v = v_init;
  snap_to_box(v, inst.v_lower, inst.v_upper);
  return inst.hard_z ? solve_hard(inst, v) : solve_soft(inst, v);
}

OcpSolution solve(const OcpInstance& inst) {
  return solve(inst, 0.5 * (inst.v_lower + inst.v_upper));
}

std::vector<Vector> default_inits(const OcpInstance& inst, int count, std::uint64_t seed) {
  std::vector<Vector> out;
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (int i = 0; i < count; ++i) {
    if (i == 0) {
      out.push_back(0.5 * (inst.v_lower + inst.v_upper));
    } else if (i == 1) {
      out.push_back(inst.v_lower);
    } else if (i == 2) {
      out.push_back(inst.v_upper);
    } else {
      Vector v(inst.n_v());
      for (int k = 0; k < v.size(); ++k) {
        v(k) = inst.v_lower(k) + unit(rng) * (inst.v_upper(k) - inst.v_lower(k));
      }
      out.push_back(v);
    }
  }
  return out;
}

SweepTable run_sweep(const std::vector<double>& grid, int num_inits,
                     const std::function<FirstStep(double, int)>& solve_point) {
  if (grid.empty()) throw ConfigError("sweep: empty grid");
  if (num_inits < 1) throw ConfigError("sweep: need at least one initialization");
  SweepTable t;
  t.grid = grid;
  t.rows.resize(grid.size() * num_inits);
  parallel_for(grid.size(), [&](std::size_t g) {
    for (int i = 0; i < num_inits; ++i) {
      SweepPoint& row = t.rows[g * num_inits + i];
      row.grid = grid[g];
      row.init = i;
      try {
        const FirstStep fs = solve_point(grid[g], i);
        row.u = fs.u;
        row.objective = fs.objective;
        row.kkt = fs.kkt;
        row.iterations = fs.iterations;
      } catch (const std::exception& e) {
        row.error = e.what();
      }
    }
  });
  const double nan = std::numeric_limits<double>::quiet_NaN();
  for (std::size_t g = 0; g < grid.size(); ++g) {
    double dis = 0.0;
    bool ok = true;
    for (int a = 0; a < num_inits; ++a) {
      const SweepPoint& ra = t.rows[g * num_inits + a];
      if (!ra.error.empty()) {
        ok = false;
        ++t.failures;
        continue;
      }
      for (int b = a + 1; b < num_inits; ++b) {
        const SweepPoint& rb = t.rows[g * num_inits + b];
        if (rb.error.empty()) dis = std::max(dis, (ra.u - rb.u).cwiseAbs().maxCoeff());
      }
    }
    t.disagreement.push_back(ok ? dis : nan);
  }
  std::vector<double> finite;
  for (std::size_t g = 0; g + 1 < grid.size(); ++g) {
    const SweepPoint& a = t.rows[g * num_inits];
    const SweepPoint& b = t.rows[(g + 1) * num_inits];
    if (!a.error.empty() || !b.error.empty()) {
      t.quotient.push_back(nan);
      continue;
    }
    const double q = (b.u - a.u).cwiseAbs().maxCoeff() / std::abs(grid[g + 1] - grid[g]);
    t.quotient.push_back(q);
    finite.push_back(q);
  }
  if (!finite.empty()) {
    std::vector<double> sorted = finite;
    std::sort(sorted.begin(), sorted.end());
    const std::size_t mid = sorted.size() / 2;
    t.median_quotient =
        sorted.size() % 2 == 1 ? sorted[mid] : 0.5 * (sorted[mid - 1] + sorted[mid]);
    t.max_quotient = sorted.back();
  }
  return t;
}

SweepTable control_law_sweep(const ShwModel& m, const OcpConfig& cfg, const Vector& d_bar,
                             const Vector& r_bar, const Vector& y_base,
                             const Vector& direction, const std::vector<double>& grid,
                             int num_inits, std::uint64_t seed) {
  if (y_base.size() != m.dims.n_y || direction.size() != m.dims.n_y) {
    throw DimensionError("sweep: y_base / direction dimensions");
  }
  return run_sweep(grid, num_inits, [&](double s, int init) {
    const Vector x0 = bnn_forward(m.phi, y_base + s * direction, d_bar);
    const OcpInstance inst = make_instance(m, x0, d_bar, r_bar, cfg);
    const auto inits = default_inits(inst, num_inits, seed);
    const OcpSolution sol = solve(inst, inits[init]);
    return FirstStep{sol.first_u(m.dims.n_u), sol.objective, sol.kkt_residual_inf,
                     sol.iterations};
  });
}

void write_sweep_csv(const std::string& path, const SweepTable& t, const std::string& comment) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error("cannot open '" + path + "' for writing");
  if (!comment.empty()) f << "# " << comment << "\n";
  int nu = 0;
  for (const auto& r : t.rows) {
    if (r.u.size() > 0) {
      nu = static_cast<int>(r.u.size());
      break;
    }
  }
  f << "grid,init";
  for (int k = 1; k <= nu; ++k) f << ",u_" << k;
  f << ",objective,kkt_residual,iterations\n";
  const std::string nan = "nan";
  for (const auto& r : t.rows) {
    f << format_double(r.grid) << ',' << r.init;
    for (int k = 0; k < nu; ++k) f << ',' << (r.error.empty() ? format_double(r.u(k)) : nan);
    if (r.error.empty()) {
      f << ',' << format_double(r.objective) << ',' << format_double(r.kkt) << ','
        << r.iterations << "\n";
    } else {
      f << ",nan,nan,-1\n";
    }
  }
  if (!f) throw Error("write to '" + path + "' failed");
}

}  // namespace shwmpc
