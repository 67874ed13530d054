#pragma once

// Comparison pipeline: a generic one-step 3-layer network
//
//   [y_{k+1}; z_k] = W2 tanh(W1 [y_k; u_k; d_k] + b1) + b2
//
// and the non-convex receding-horizon problem over U solved by SQP.

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "shwmpc/dataset.hpp"
#include "shwmpc/linalg.hpp"
#include "shwmpc/model_io.hpp"
#include "shwmpc/ocp.hpp"

namespace shwmpc {

struct DenseNnModel {
  ShwDims dims;
  int width = 16;
  double delta = 0.1;
  Matrix w1;  // width x (n_y + n_u + n_d)
  Vector b1;
  Matrix w2;  // (n_y + n_z) x width
  Vector b2;

  int in_dim() const { return dims.n_y + dims.n_u + dims.n_d; }
  int out_dim() const { return dims.n_y + dims.n_z; }
  std::size_t num_params() const {
    return static_cast<std::size_t>(width) * (in_dim() + 1) +
           static_cast<std::size_t>(out_dim()) * (width + 1);
  }
  void validate() const;
};

DenseNnModel make_dense_model(const ShwDims& dims, int width, double delta, std::mt19937_64& rng);

/// Hidden width whose parameter count is closest to `target`.
int width_for_param_count(const ShwDims& dims, std::size_t target);

struct DenseEval {
  Vector y_next;
  Vector z;
  Matrix jac;  // out_dim x in_dim, filled when requested
};

DenseEval dense_eval(const DenseNnModel& m, const Vector& y, const Vector& u, const Vector& d,
                     bool with_jac = false);

struct BaselineFitConfig {
  int width = 0;  // 0 means match `match_params`
  std::size_t match_params = 0;
  int epochs = 200;
  int batch_size = 32;
  double learning_rate = 1e-3;
  double final_lr_fraction = 0.01;
  double validation_fraction = 0.2;
  std::uint64_t seed = 0;
};

struct BaselineFitResult {
  DenseNnModel model;
  double train_loss = 0.0;
  double validation_loss = 0.0;
  std::vector<double> validation_r2;  // per output channel (y then z)
  std::size_t structured_params = 0;
  int epochs_run = 0;
};

/// One-step pairs (y_k, u_k, d_k) -> (y_{k+1}, z_k) with y_{k+1} taken
/// `delta` later. The dataset sample period must divide delta.
struct OneStepData {
  Matrix inputs;   // in_dim x N
  Matrix targets;  // out_dim x N
};
OneStepData one_step_pairs(const TimeSeriesDataset& ds, double delta);

double dense_loss(const DenseNnModel& m, const OneStepData& data);
std::vector<double> dense_r2(const DenseNnModel& m, const OneStepData& data);

/// Mini-batch Adam on the mean squared one-step error. Throws TrainingError
/// on a non-finite loss.
BaselineFitResult baseline_fit(const TimeSeriesDataset& ds, double delta,
                               const BaselineFitConfig& cfg);

struct BaselineMpcConfig {
  int horizon = 20;
  Vector u_lower, u_upper;  // empty means +-1
  Vector z_weight;          // empty means 1
  Vector z_ceiling;         // empty means 0.8
  int max_iterations = 500;
  double tolerance = 1e-6;
};

struct BaselineProblem {
  const DenseNnModel* model = nullptr;
  int n = 1;
  Vector y0, d_bar, r_bar;
  Vector u_lower, u_upper;  // stacked
  Vector z_weight, z_ceiling;
  int max_iterations = 500;
  double tolerance = 1e-6;

  int n_u_total() const { return static_cast<int>(u_lower.size()); }
};

BaselineProblem make_baseline_problem(const DenseNnModel& m, const Vector& y0,
                                      const Vector& d_bar, const Vector& r_bar,
                                      const BaselineMpcConfig& cfg);

/// |E_y|^2 + f_z(Z) with the network rolled out over the horizon. The
/// Gauss-Newton Hessian is written when requested.
double baseline_objective(const BaselineProblem& p, const Vector& u, Vector* grad = nullptr,
                          Matrix* gn_hess = nullptr);

struct BaselineSolution {
  Vector u;
  Vector lambda;  // [lower; upper]
  double objective = 0.0;
  double residual_inf = 0.0;  // first-order KKT residual
  int iterations = 0;

  Vector first_u(int n_u) const { return u.head(n_u); }
};

/// Damped Gauss-Newton SQP with box-QP subproblems and Armijo backtracking.
/// Returns a first-order KKT point; throws SolverError when the residual
/// stays above tolerance after max_iterations.
BaselineSolution baseline_mpc_solve(const BaselineProblem& p, const Vector& u_init);

/// Midpoint, lower corner, upper corner, then uniform random points.
std::vector<Vector> baseline_inits(const BaselineProblem& p, int count, std::uint64_t seed);

SweepTable baseline_sweep(const DenseNnModel& m, const BaselineMpcConfig& cfg,
                          const Vector& d_bar, const Vector& r_bar, const Vector& y_base,
                          const Vector& direction, const std::vector<double>& grid,
                          int num_inits, std::uint64_t seed);

/// Scalar model with a fold: y+ = 0.5 y + g(u), g a non-monotone bump plus a
/// small slope, so |y+ - r|^2 has two separated minima in u for mid-range r.
DenseNnModel fold_model();

std::string dense_model_to_json(const DenseNnModel& m, const ArtifactMeta& meta = {});
DenseNnModel dense_model_from_json(const std::string& text, ArtifactMeta* meta = nullptr);

}  // namespace shwmpc
