#pragma once

// LQR around a stationarily realizable target, with a barrier-function QP
// filter that keeps u in the input box and z = Xi(x; dbar) below zbar.

#include <functional>
#include <string>
#include <vector>

#include "shwmpc/linalg.hpp"
#include "shwmpc/plant.hpp"
#include "shwmpc/shw_model.hpp"

namespace shwmpc {

struct Equilibrium {
  Vector x_bar;  // Phi(rbar; dbar)
  Vector v_bar;
  Vector u_bar;  // Psi^{-1}(vbar; dbar)
  Vector d_bar;
  Vector r_bar;
};

/// vbar = -B^{-1}(A xbar + c) at dbar. Throws NotRealizableError when
/// ubar leaves [u_lower, u_upper] (empty means +-1).
Equilibrium find_equilibrium(const ShwModel& m, const Vector& d_bar, const Vector& r_bar,
                             const Vector& u_lower = {}, const Vector& u_upper = {});

/// State-only constraint output with its Jacobian (n_z x n_y).
using StateConstraint = std::function<Vector(const Vector& x, Matrix* jac)>;

struct CbfConfig {
  Vector gamma;      // kappa_i(s) = gamma_i s; empty means 1
  Vector z_ceiling;  // empty means 0.8
  Vector u_lower, u_upper;
  Matrix q;  // state weight of the LQR cost; empty means Q0 of the output error at xbar
  RiccatiConvention convention = RiccatiConvention::kPrinted;
  // Overrides Xi (the default requires a state-only Xi).
  StateConstraint constraint;
};

struct CbfController {
  Equilibrium eq;
  Matrix a, b;
  Vector c;
  Matrix q;
  Matrix p;
  Matrix k;  // -B^T P
  Vector gamma;
  Vector z_ceiling;
  Vector u_lower, u_upper;
  Vector v_lower, v_upper;
  RiccatiConvention convention = RiccatiConvention::kPrinted;
  StateConstraint constraint;
};

/// Throws ModelUnsuitableError when Xi depends on v and no override is given.
CbfController make_cbf_controller(const ShwModel& m, const Vector& d_bar, const Vector& r_bar,
                                  const CbfConfig& cfg = {});

struct CbfStep {
  Vector v_nominal;  // vbar + K (x - xbar)
  Vector v;          // filtered
  Vector u;
  Vector z;
  std::vector<bool> barrier_active;  // per z channel
  std::vector<bool> box_active;      // per v coordinate
};

/// v* = argmin ||v - v_nominal||^2 over the box and the barrier rows
///   dXi_i/dx (A (x - xbar) + B (v - vbar)) <= gamma_i (zbar_i - Xi_i(x)).
/// Throws InfeasibleError when the set is empty.
CbfStep cbf_filter_step(const CbfController& ctrl, const ShwModel& m, const Vector& x);

/// d/dt (x - xbar)^T P (x - xbar) along the unconstrained loop v = vbar + K (x - xbar).
double lyapunov_derivative(const CbfController& ctrl, const Vector& x);

struct CbfTrajectory {
  std::vector<double> t;
  std::vector<Vector> x, u, v, z;
  std::vector<std::vector<bool>> barrier_active;
  double max_violation = 0.0;  // max over fine steps and channels of z - zbar
};

/// Simulates the model's continuous dynamics at dbar with RK4 at delta /
/// substeps; the filter runs every delta (zero-order hold). Throws
/// InfeasibleError when x0 violates the ceiling.
CbfTrajectory cbf_closed_loop(const CbfController& ctrl, const ShwModel& m, const Vector& x0,
                              int steps, int substeps = 100);

void write_cbf_trajectory_csv(const std::string& path, const CbfTrajectory& tr,
                              const std::string& comment = {});

/// Output-feedback wrapper for plant simulation: x = Phi(y; dbar).
Controller cbf_policy(const CbfController& ctrl, const ShwModel& m);

}  // namespace shwmpc
