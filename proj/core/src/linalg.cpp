#include "shwmpc/linalg.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <string>

#include "shwmpc/error.hpp"

namespace shwmpc {
namespace {

void require_square(const Matrix& m, const char* what) {
  if (m.rows() != m.cols()) {
    std::ostringstream os;
    os << what << " must be square, got " << m.rows() << "x" << m.cols();
    throw DimensionError(os.str());
  }
}

bool is_hurwitz(const Matrix& a) {
  Eigen::EigenSolver<Matrix> es(a, false);
  return (es.eigenvalues().real().array() < 0.0).all();
}

Matrix riccati_weight(const Matrix& b, RiccatiConvention convention) {
  return convention == RiccatiConvention::kPrinted ? Matrix(b.transpose() * b)
                                                   : Matrix(b * b.transpose());
}

}  // namespace

Matrix expm(const Matrix& a, double t) {
  require_square(a, "expm argument");
  if (t < 0.0) throw Error("expm: negative time");
  const Eigen::Index n = a.rows();
  if (n == 0) return Matrix(0, 0);
  Matrix x = a * t;

  // Scale so that ||x||_1 <= 1/2; the [6/6] Pade error is then ~1e-17.
  const double norm = x.cwiseAbs().colwise().sum().maxCoeff();
  int squarings = 0;
  if (norm > 0.5) {
    squarings = std::max(0, static_cast<int>(std::ceil(std::log2(norm / 0.5))));
    x /= std::ldexp(1.0, squarings);
  }

  // c_k = (2p-k)! p! / ((2p)! k! (p-k)!) for p = 6.
  constexpr int kDegree = 6;
  double c = 1.0;
  const Matrix ident = Matrix::Identity(n, n);
  Matrix power = ident;
  Matrix numer = ident;
  Matrix denom = ident;
  for (int k = 1; k <= kDegree; ++k) {
    c *= static_cast<double>(kDegree - k + 1) /
         static_cast<double>(k * (2 * kDegree - k + 1));
    power = power * x;
    numer += c * power;
    denom += ((k % 2 == 0) ? c : -c) * power;
  }
  Matrix e = denom.partialPivLu().solve(numer);
  for (int i = 0; i < squarings; ++i) e = e * e;
  return e;
}

DiscretePair discretize_pair(const Matrix& a, const Matrix& b, const Vector& c,
                             double delta) {
  require_square(a, "A");
  const Eigen::Index n = a.rows();
  if (b.rows() != n || c.size() != n) {
    throw DimensionError("discretize_pair: B and c must have as many rows as A");
  }
  if (!(delta > 0.0)) throw Error("discretize_pair: sampling period must be > 0");

  Matrix aug = Matrix::Zero(2 * n, 2 * n);
  aug.topLeftCorner(n, n) = a;
  aug.topRightCorner(n, n).setIdentity();
  const Matrix phi = expm(aug, delta);

  DiscretePair out;
  out.a_d = phi.topLeftCorner(n, n);
  const Matrix gamma = phi.topRightCorner(n, n);
  out.b_d = gamma * b;
  out.c_d = gamma * c;
  return out;
}

Matrix solve_lyapunov(const Matrix& a, const Matrix& c) {
  require_square(a, "A");
  const Eigen::Index n = a.rows();
  if (c.rows() != n || c.cols() != n) {
    throw DimensionError("solve_lyapunov: C must match A");
  }
  const Matrix ident = Matrix::Identity(n, n);
  // vec(A^T X) = (I kron A^T) vec X,  vec(X A) = (A^T kron I) vec X.
  Matrix k = Matrix::Zero(n * n, n * n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < n; ++j) {
      k.block(i * n, j * n, n, n) += ident(i, j) * a.transpose();
      k.block(i * n, j * n, n, n) += a(j, i) * ident;
    }
  }
  const Vector rhs = -Eigen::Map<const Vector>(c.data(), n * n);
  Eigen::PartialPivLU<Matrix> lu(k);
  if (std::abs(lu.determinant()) == 0.0) {
    throw ConditioningError("solve_lyapunov: singular Lyapunov operator");
  }
  Vector x = lu.solve(rhs);
  Matrix out = Eigen::Map<Matrix>(x.data(), n, n);
  return 0.5 * (out + out.transpose());
}

double care_residual(const Matrix& a, const Matrix& b, const Matrix& q,
                     const Matrix& p, RiccatiConvention convention) {
  const Matrix s = riccati_weight(b, convention);
  return (p * a + a.transpose() * p - p * s * p + q).norm();
}

Matrix solve_care(const Matrix& a, const Matrix& b, const Matrix& q,
                  RiccatiConvention convention) {
  require_square(a, "A");
  require_square(q, "Q");
  const Eigen::Index n = a.rows();
  if (q.rows() != n || b.rows() != n) {
    throw DimensionError("solve_care: A, B and Q dimensions disagree");
  }
  if (convention == RiccatiConvention::kPrinted && b.cols() != n) {
    throw DimensionError("solve_care: the B^T B convention needs a square B");
  }
  const Matrix s = riccati_weight(b, convention);
  const Matrix ident = Matrix::Identity(n, n);

  // Stabilizing seed: (A + beta I) Z + Z (A + beta I)^T = 2 S, P0 = Z^{-1}.
  Matrix p;
  const double beta = a.norm() + 1.0;
  const Matrix shifted = a + beta * ident;
  Matrix z = solve_lyapunov(shifted.transpose(), -2.0 * s);
  Eigen::LLT<Matrix> llt(z);
  if (llt.info() == Eigen::Success) {
    p = llt.solve(ident);
  } else if (is_hurwitz(a)) {
    p = Matrix::Zero(n, n);
  } else {
    throw SolverError("solve_care: (A, B) is not stabilizable from the seed");
  }

  const double q_norm = std::max(q.norm(), std::numeric_limits<double>::min());
  constexpr int kMaxIterations = 200;
  for (int it = 0; it < kMaxIterations; ++it) {
    const Matrix a_k = a - s * p;
    Matrix next = solve_lyapunov(a_k, q + p * s * p);
    const double step = (next - p).norm();
    p = next;
    if (step <= 1e-14 * std::max(1.0, p.norm())) break;
  }

  const double res = care_residual(a, b, q, p, convention);
  if (!all_finite(p) || res > 1e-8 * q_norm || !is_positive_definite(p)) {
    throw SolverError("solve_care: Newton-Kleinman did not reach a stabilizing "
                      "solution",
                      res);
  }
  return p;
}

bool all_finite(const Matrix& m) { return m.allFinite(); }

bool is_positive_definite(const Matrix& m) {
  if (m.rows() != m.cols()) return false;
  Eigen::LLT<Matrix> llt(0.5 * (m + m.transpose()));
  return llt.info() == Eigen::Success;
}

namespace {

// Constraints in ">=" form: n_j^T x >= b_j.
struct GeConstraints {
  Matrix normals;  // n x m, one column per constraint
  Vector rhs;
  // Provenance for reporting and multiplier unpacking.
  enum class Kind { kLower, kUpper, kIneq };
  std::vector<Kind> kind;
  std::vector<Eigen::Index> source;
};

GeConstraints gather_constraints(const Vector& lower, const Vector& upper,
                                 const LinearInequalities* extra) {
  const Eigen::Index n = lower.size();
  std::vector<Vector> cols;
  std::vector<double> rhs;
  GeConstraints out;
  for (Eigen::Index i = 0; i < n; ++i) {
    if (std::isfinite(lower(i))) {
      Vector e = Vector::Zero(n);
      e(i) = 1.0;
      cols.push_back(e);
      rhs.push_back(lower(i));
      out.kind.push_back(GeConstraints::Kind::kLower);
      out.source.push_back(i);
    }
    if (std::isfinite(upper(i))) {
      Vector e = Vector::Zero(n);
      e(i) = -1.0;
      cols.push_back(e);
      rhs.push_back(-upper(i));
      out.kind.push_back(GeConstraints::Kind::kUpper);
      out.source.push_back(i);
    }
  }
  if (extra != nullptr) {
    for (Eigen::Index r = 0; r < extra->g.rows(); ++r) {
      cols.push_back(-extra->g.row(r).transpose());
      rhs.push_back(-extra->h(r));
      out.kind.push_back(GeConstraints::Kind::kIneq);
      out.source.push_back(r);
    }
  }
  out.normals.resize(n, static_cast<Eigen::Index>(cols.size()));
  out.rhs.resize(static_cast<Eigen::Index>(rhs.size()));
  for (std::size_t j = 0; j < cols.size(); ++j) {
    out.normals.col(static_cast<Eigen::Index>(j)) = cols[j];
    out.rhs(static_cast<Eigen::Index>(j)) = rhs[j];
  }
  return out;
}

std::string describe_row(const GeConstraints& c, Eigen::Index j) {
  std::ostringstream os;
  switch (c.kind[j]) {
    case GeConstraints::Kind::kLower:
      os << "lower bound " << c.source[j];
      break;
    case GeConstraints::Kind::kUpper:
      os << "upper bound " << c.source[j];
      break;
    case GeConstraints::Kind::kIneq:
      os << "inequality row " << c.source[j];
      break;
  }
  return os.str();
}

}  // namespace

QpResult solve_qp(const Matrix& h, const Vector& g, const Vector& lower,
                  const Vector& upper, const LinearInequalities* extra) {
  require_square(h, "QP Hessian");
  const Eigen::Index n = h.rows();
  if (g.size() != n || lower.size() != n || upper.size() != n) {
    throw DimensionError("solve_qp: gradient/bounds do not match the Hessian");
  }
  if (extra != nullptr &&
      (extra->g.cols() != n || extra->g.rows() != extra->h.size())) {
    throw DimensionError("solve_qp: inequality block has wrong shape");
  }
  for (Eigen::Index i = 0; i < n; ++i) {
    if (lower(i) > upper(i)) {
      std::ostringstream os;
      os << "solve_qp: empty box in coordinate " << i;
      throw InfeasibleError(os.str());
    }
  }

  Eigen::LLT<Matrix> llt(h);
  if (llt.info() != Eigen::Success) {
    throw ConditioningError("solve_qp: Hessian is not positive definite");
  }
  const Matrix h_inv = llt.solve(Matrix::Identity(n, n));

  const GeConstraints cons = gather_constraints(lower, upper, extra);
  const Eigen::Index m = cons.normals.cols();

  Vector x = -h_inv * g;
  std::vector<Eigen::Index> active;
  std::vector<double> mult;  // multipliers of `active`

  const double scale = 1.0 + g.cwiseAbs().maxCoeff() +
                       (m > 0 ? cons.rhs.cwiseAbs().maxCoeff() : 0.0);
  const double feas_tol = 1e-13 * scale;
  const int max_iter = static_cast<int>(50 * (n + m) + 100);
  int iter = 0;

  auto slack = [&](Eigen::Index j) {
    return cons.normals.col(j).dot(x) - cons.rhs(j);
  };

  while (true) {
    // Most violated constraint.
    Eigen::Index p = -1;
    double worst = -feas_tol;
    for (Eigen::Index j = 0; j < m; ++j) {
      if (std::find(active.begin(), active.end(), j) != active.end()) continue;
      const double s = slack(j) / std::max(1.0, cons.normals.col(j).norm());
      if (s < worst) {
        worst = s;
        p = j;
      }
    }
    if (p < 0) break;

    double u_p = 0.0;
    const Vector n_p = cons.normals.col(p);
    while (true) {
      if (++iter > max_iter) {
        throw SolverError("solve_qp: iteration limit reached", -worst);
      }
      const auto q = static_cast<Eigen::Index>(active.size());
      Vector z;
      Vector r(q);
      if (q == 0) {
        z = h_inv * n_p;
      } else {
        Matrix nmat(n, q);
        for (Eigen::Index k = 0; k < q; ++k) nmat.col(k) = cons.normals.col(active[k]);
        const Matrix hn = h_inv * nmat;
        const Matrix gram = nmat.transpose() * hn;
        Eigen::LDLT<Matrix> ldlt(gram);
        r = ldlt.solve(hn.transpose() * n_p);
        z = h_inv * n_p - hn * r;
      }

      // Partial step: first active multiplier to hit zero.
      double t1 = std::numeric_limits<double>::infinity();
      Eigen::Index drop = -1;
      for (Eigen::Index k = 0; k < q; ++k) {
        if (r(k) > 0.0) {
          const double ratio = mult[k] / r(k);
          if (ratio < t1) {
            t1 = ratio;
            drop = k;
          }
        }
      }
      // Full step: makes constraint p active.
      const double curvature = z.dot(n_p);
      const double ref = n_p.dot(h_inv * n_p);
      double t2 = std::numeric_limits<double>::infinity();
      const bool z_zero = !(curvature > 1e-12 * std::max(ref, 1e-300));
      if (!z_zero) t2 = -slack(p) / curvature;

      const double t = std::min(t1, t2);
      if (!std::isfinite(t)) {
        std::ostringstream os;
        os << "solve_qp: infeasible constraints; cannot satisfy "
           << describe_row(cons, p);
        for (auto j : active) os << ", with active " << describe_row(cons, j);
        throw InfeasibleError(os.str());
      }

      if (z_zero) {
        for (Eigen::Index k = 0; k < q; ++k) mult[k] -= t * r(k);
        u_p += t;
        active.erase(active.begin() + drop);
        mult.erase(mult.begin() + drop);
        continue;
      }

      x += t * z;
      for (Eigen::Index k = 0; k < q; ++k) mult[k] -= t * r(k);
      u_p += t;
      if (t2 <= t1) {
        active.push_back(p);
        mult.push_back(u_p);
        break;
      }
      active.erase(active.begin() + drop);
      mult.erase(mult.begin() + drop);
    }
  }

  QpResult out;
  out.x = x;
  out.iterations = iter;
  out.mu_lower = Vector::Zero(n);
  out.mu_upper = Vector::Zero(n);
  out.mu_ineq = Vector::Zero(extra != nullptr ? extra->g.rows() : 0);
  for (std::size_t k = 0; k < active.size(); ++k) {
    const Eigen::Index j = active[k];
    const double mu = std::max(0.0, mult[k]);
    switch (cons.kind[j]) {
      case GeConstraints::Kind::kLower:
        out.mu_lower(cons.source[j]) = mu;
        // Equal bounds: snap exactly.
        out.x(cons.source[j]) = lower(cons.source[j]);
        break;
      case GeConstraints::Kind::kUpper:
        out.mu_upper(cons.source[j]) = mu;
        out.x(cons.source[j]) = upper(cons.source[j]);
        break;
      case GeConstraints::Kind::kIneq:
        out.mu_ineq(cons.source[j]) = mu;
        break;
    }
  }
  return out;
}

Vector solve_box_qp(const Matrix& h, const Vector& g, const Vector& lower,
                    const Vector& upper, const LinearInequalities* extra) {
  return solve_qp(h, g, lower, upper, extra).x;
}

double qp_kkt_residual(const Matrix& h, const Vector& g, const Vector& lower,
                       const Vector& upper, const LinearInequalities* extra,
                       const QpResult& res) {
  Vector stat = h * res.x + g - res.mu_lower + res.mu_upper;
  if (extra != nullptr && extra->g.rows() > 0) {
    stat += extra->g.transpose() * res.mu_ineq;
  }
  double worst = stat.cwiseAbs().maxCoeff();
  for (Eigen::Index i = 0; i < res.x.size(); ++i) {
    const double lo_gap = std::isfinite(lower(i)) ? res.x(i) - lower(i) : 1.0;
    const double hi_gap = std::isfinite(upper(i)) ? upper(i) - res.x(i) : 1.0;
    worst = std::max(worst, std::max(0.0, -lo_gap));
    worst = std::max(worst, std::max(0.0, -hi_gap));
    if (std::isfinite(lower(i))) worst = std::max(worst, std::abs(res.mu_lower(i) * lo_gap));
    if (std::isfinite(upper(i))) worst = std::max(worst, std::abs(res.mu_upper(i) * hi_gap));
  }
  if (extra != nullptr) {
    for (Eigen::Index r = 0; r < extra->g.rows(); ++r) {
      const double gap = extra->h(r) - extra->g.row(r).dot(res.x);
      worst = std::max(worst, std::max(0.0, -gap));
      worst = std::max(worst, std::abs(res.mu_ineq(r) * gap));
    }
  }
  return worst;
}

}  // namespace shwmpc
