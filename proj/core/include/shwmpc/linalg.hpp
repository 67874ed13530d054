#pragma once

#include <Eigen/Dense>

#include <vector>

namespace shwmpc {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/// e^{A t} by scaling and squaring with a degree-6 Pade approximant.
Matrix expm(const Matrix& a, double t = 1.0);

struct DiscretePair {
  Matrix a_d;
  Matrix b_d;
  Vector c_d;
};

/// Zero-order-hold discretization of x' = A x + B v + c over one period
/// `delta`:
///   A_d = e^{A delta},  B_d = Gamma B,  c_d = Gamma c,
///   Gamma = int_0^delta e^{A tau} dtau.
/// Both e^{A delta} and Gamma come out of a single exponential of the
/// augmented matrix [[A, I], [0, 0]].
DiscretePair discretize_pair(const Matrix& a, const Matrix& b, const Vector& c,
                             double delta);

/// Quadratic term used in the Riccati equation.
///   kPrinted:  P A + A^T P - P B^T B P + Q = 0
///   kStandard: P A + A^T P - P B B^T P + Q = 0   (LQR with R = I)
/// kPrinted requires a square B.
enum class RiccatiConvention { kPrinted, kStandard };

/// Stabilizing solution of the continuous algebraic Riccati equation.
/// Newton-Kleinman iteration seeded by Bass' shifted-Lyapunov gain.
/// Throws SolverError if no stabilizing solution meets the residual bound
/// ||residual||_F <= 1e-8 ||Q||_F.
Matrix solve_care(const Matrix& a, const Matrix& b, const Matrix& q,
                  RiccatiConvention convention = RiccatiConvention::kPrinted);

/// Frobenius norm of the Riccati residual for the given convention.
double care_residual(const Matrix& a, const Matrix& b, const Matrix& q,
                     const Matrix& p, RiccatiConvention convention);

/// Solves A^T X + X A + C = 0 (dense Kronecker form; n <= ~15).
Matrix solve_lyapunov(const Matrix& a, const Matrix& c);

/// Rows of G v <= h appended to a box QP.
struct LinearInequalities {
  Matrix g;
  Vector h;
};

struct QpResult {
  Vector x;
  // Multipliers, all >= 0: H x + g - mu_lower + mu_upper + G^T mu_ineq = 0.
  Vector mu_lower;
  Vector mu_upper;
  Vector mu_ineq;
  int iterations = 0;
};

/// min 1/2 x^T H x + g^T x  s.t.  lower <= x <= upper,  G x <= h.
/// Dual active-set method of Goldfarb and Idnani. H must be symmetric
/// positive definite; infinite bounds are allowed. Throws InfeasibleError
/// naming the offending rows when the constraints cannot be met.
QpResult solve_qp(const Matrix& h, const Vector& g, const Vector& lower,
                  const Vector& upper, const LinearInequalities* extra = nullptr);

/// Convenience wrapper returning only the minimizer.
Vector solve_box_qp(const Matrix& h, const Vector& g, const Vector& lower,
                    const Vector& upper,
                    const LinearInequalities* extra = nullptr);

/// Stationarity + complementarity + feasibility violation of a QpResult.
double qp_kkt_residual(const Matrix& h, const Vector& g, const Vector& lower,
                       const Vector& upper, const LinearInequalities* extra,
                       const QpResult& result);

bool all_finite(const Matrix& m);

/// True when LLT of the symmetric part succeeds.
bool is_positive_definite(const Matrix& m);

}  // namespace shwmpc
