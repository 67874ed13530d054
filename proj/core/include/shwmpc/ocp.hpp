#pragma once

// Convex finite-horizon OCP in the decision variable V = [v_0; ...; v_{n-1}]:
//
//   min_V  E^T Q E + f_u(V) + sum_k sum_j max(0, w_j (z_jk - zbar_j)^3)
//   E   = X - 1_n (x) Phi(rbar; dbar),  X = Abar x0 + Bbar V + cbar
//   z_k = Xi(x_k, v_k; dbar),  k = 0 .. n-1
//   s.t. v_lower <= V <= v_upper   (the input box mapped through Psi)

#include <functional>
#include <string>
#include <vector>

#include "shwmpc/linalg.hpp"
#include "shwmpc/shw_model.hpp"

namespace shwmpc {

struct StackedAffine {
  Matrix a_bar;  // n n_y x n_y
  Matrix b_bar;  // n n_y x n n_u, block lower triangular
  Vector c_bar;  // n n_y
};

/// Convex C^2 input cost in V-space: returns f and adds its gradient and
/// Hessian when the pointers are non-null.
using InputCost = std::function<double(const Vector& v, Vector* grad, Matrix* hess)>;

struct OcpConfig {
  int horizon = 20;
  Vector u_lower;  // empty means -1
  Vector u_upper;  // empty means +1
  Vector z_weight;   // w_j; empty means 1
  Vector z_ceiling;  // zbar_j; empty means 0.8
  bool z_penalty = true;
  // Treat z_k <= zbar as hard inequalities (SQP over linearizations).
  bool hard_z = false;
  InputCost f_u;  // empty means 0
  int max_iterations = 500;
  double tolerance = 1e-8;
};

struct OcpInstance {
  const ShwModel* model = nullptr;
  DiscreteModel dm;
  StackedAffine stacked;
  int n = 1;
  Vector x0;
  Vector d_bar;
  Vector r_bar;
  Vector x_ref;  // Phi(rbar; dbar)
  Matrix q;      // n n_y square
  Vector u_lower, u_upper;  // per step
  Vector v_lower, v_upper;  // stacked, n n_u
  Vector z_weight, z_ceiling;
  bool z_penalty = true;
  bool hard_z = false;
  InputCost f_u;
  int max_iterations = 500;
  double tolerance = 1e-8;

  int n_v() const { return static_cast<int>(v_lower.size()); }
};

/// Q0 = (J^{-1})^T J^{-1} with J = dPhi/dy at (Phi^{-1}(x0; dbar), dbar);
/// Q = I_n (x) Q0. Throws ConditioningError when J is singular.
Matrix build_q(const ShwModel& m, const Vector& x0, const Vector& d_bar, int n);

StackedAffine build_stacked(const DiscreteModel& dm, int n);

/// Builds the instance at measured state x0 (already in x coordinates).
/// Throws ModelUnsuitableError for a singular B_delta.
OcpInstance make_instance(const ShwModel& m, const Vector& x0, const Vector& d_bar,
                          const Vector& r_bar, const OcpConfig& cfg);

/// Per-call bookkeeping for the structural computation-cost check.
struct ObjectiveTrace {
  int xi_calls = 0;        // Xi evaluations (one per stage)
  int psi_calls = 0;       // Psi / Phi evaluations inside the objective
  int rollout_steps = 0;   // sequential state propagations (must stay 0)
  std::vector<int> stage_order;
};

/// Stage states [x_0; x_1; ...; x_{n-1}] feeding Xi, from the stacked map.
std::vector<Vector> stage_states(const OcpInstance& inst, const Vector& v);

/// Objective with optional gradient and Hessian. Xi's Hessian is approximated
/// by finite differences of its exact gradient, and only at stages where the
/// penalty is active. `stage_order` (optional) permutes the order in which
/// the independent stage terms are evaluated.
double objective(const OcpInstance& inst, const Vector& v, Vector* grad = nullptr,
                 Matrix* hess = nullptr, ObjectiveTrace* trace = nullptr,
                 const std::vector<int>* stage_order = nullptr);

/// Stage constraint outputs z_0 .. z_{n-1}.
std::vector<Vector> stage_z(const OcpInstance& inst, const Vector& v);

/// Fischer-Burmeister function a + b - sqrt(a^2 + b^2).
double fischer_burmeister(double a, double b);

/// F = [dL/dV; phi(lambda, -g)], g = [v_lower - V; V - v_upper],
/// lambda = [lambda_lower; lambda_upper] (2 n n_u).
Vector kkt_residual(const OcpInstance& inst, const Vector& v, const Vector& lambda);

/// Multipliers implied by the gradient at a feasible V.
Vector estimate_multipliers(const OcpInstance& inst, const Vector& v, const Vector& grad);

struct OcpSolution {
  Vector v;
  Vector u;       // Psi^{-1}(v_k; dbar), per step, stacked
  Vector lambda;  // 2 n n_u
  double objective = 0.0;
  double kkt_residual_inf = 0.0;
  int iterations = 0;
  Vector z_max;  // per z channel, max over the horizon

  Vector first_u(int n_u) const { return u.head(n_u); }
};

/// Projected Newton: each step solves the box QP of the local quadratic
/// model, followed by an Armijo backtracking search. Stops when the KKT
/// residual is <= tolerance. Throws SolverError with the last residual on
/// hitting the iteration cap.
OcpSolution solve(const OcpInstance& inst, const Vector& v_init);
OcpSolution solve(const OcpInstance& inst);  // starts at the box midpoint

/// Initial guesses: midpoint, lower corner, upper corner, then uniform
/// random points in the box.
std::vector<Vector> default_inits(const OcpInstance& inst, int count, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Control-law sweep

struct SweepPoint {
  double grid = 0.0;
  int init = 0;
  Vector u;  // first-step input
  double objective = 0.0;
  double kkt = 0.0;
  int iterations = 0;
  std::string error;  // empty on success
};

struct SweepTable {
  std::vector<SweepPoint> rows;  // grid-major
  std::vector<double> grid;
  std::vector<double> disagreement;  // per grid point, max over init pairs (inf norm)
  std::vector<double> quotient;      // per interval, |du| / |dgrid| of init 0
  double median_quotient = 0.0;
  double max_quotient = 0.0;
  int failures = 0;
};

struct FirstStep {
  Vector u;
  double objective = 0.0;
  double kkt = 0.0;
  int iterations = 0;
};

/// Generic sweep driver; `solve_point(grid_value, init_index)` returns the
/// first-step input. Errors are recorded per row, not thrown. Grid points
/// run in parallel.
SweepTable run_sweep(const std::vector<double>& grid, int num_inits,
                     const std::function<FirstStep(double, int)>& solve_point);

/// Sweeps y0 = y_base + s * direction for s in grid with `num_inits` starts.
SweepTable control_law_sweep(const ShwModel& m, const OcpConfig& cfg, const Vector& d_bar,
                             const Vector& r_bar, const Vector& y_base,
                             const Vector& direction, const std::vector<double>& grid,
                             int num_inits, std::uint64_t seed);

void write_sweep_csv(const std::string& path, const SweepTable& t,
                     const std::string& comment = {});

}  // namespace shwmpc
