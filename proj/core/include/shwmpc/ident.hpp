#pragma once

// One-shot identification: minimize the mean of e_i^T K_e e_i over a dataset,
// where e_i is the eliminated-state residual of record i.

#include <array>
#include <cstdint>
#include <span>
#include <vector>

#include "shwmpc/dataset.hpp"
#include "shwmpc/shw_model.hpp"

namespace shwmpc {

enum class Component : int { kPsi = 0, kPhi, kXi, kA, kB, kC };
inline constexpr int kNumComponents = 6;
const char* component_name(Component c);

/// theta = [psi; phi; xi; A; B; c] as one flat vector.
struct ThetaBundle {
  std::vector<double> values;
  std::array<std::size_t, kNumComponents + 1> bounds{};

  std::size_t size() const { return values.size(); }
  std::span<double> slice(Component c) {
    const auto k = static_cast<int>(c);
    return {values.data() + bounds[k], bounds[k + 1] - bounds[k]};
  }
  std::span<const double> slice(Component c) const {
    const auto k = static_cast<int>(c);
    return {values.data() + bounds[k], bounds[k + 1] - bounds[k]};
  }

  static ThetaBundle from_model(const ShwModel& m);
  /// Same layout, all zeros.
  static ThetaBundle zeros_like(const ShwModel& m);
  void to_model(ShwModel& m) const;
};

struct IdentConfig {
  Matrix k_e;  // empty means identity
  int batch_size = 32;
  double learning_rate = 1e-3;
  double final_lr_fraction = 0.01;  // cosine decay floor
  int epochs = 200;
  std::uint64_t seed = 0;
  double validation_fraction = 0.2;
  // Full-batch L-BFGS iterations run after the stochastic phase.
  int lbfgs_iterations = 0;
  int lbfgs_memory = 10;
  // Components that are updated; frozen ones keep their initial values.
  std::array<bool, kNumComponents> train{true, true, true, true, true, true};
  bool verbose = false;

  /// Resolves an empty K_e and checks it is symmetric positive definite.
  Matrix weight(const ShwDims& dims) const;
  void validate(const ShwDims& dims) const;
};

/// Mean of e^T K_e e over the records listed in idx (all records when idx is
/// empty). Throws ConditioningError naming the record on a singular
/// Jacobian.
double loss(const ShwModel& m, const TimeSeriesDataset& ds, const Matrix& k_e,
            std::span<const std::size_t> idx = {});

struct LossGrad {
  double loss = 0.0;
  ThetaBundle grad;
};

/// Loss and its gradient with respect to every parameter, by reverse-mode
/// differentiation through the residual (including the Jacobian solve).
/// The reduction order is fixed, so the result does not depend on the
/// thread count.
LossGrad grad_loss(const ShwModel& m, const TimeSeriesDataset& ds, const Matrix& k_e,
                   std::span<const std::size_t> idx = {});

struct EpochStats {
  int epoch = 0;
  double learning_rate = 0.0;
  double train_loss = 0.0;
  double val_loss = 0.0;  // NaN without a validation set
};

struct JacobianStats {
  double min_abs_det = 0.0;  // |det dPhi/dy| over the dataset
  double max_abs_det = 0.0;
  double min_omega_det = 0.0;  // smallest |det Omega| over Phi and Psi layers
};

struct TrainingReport {
  std::vector<EpochStats> epochs;
  int lbfgs_iterations = 0;
  double final_train_loss = 0.0;
  double final_val_loss = 0.0;
  JacobianStats jacobian;
  std::size_t num_train = 0;
  std::size_t num_val = 0;
  double seconds = 0.0;
};

struct FitResult {
  ShwModel model;
  TrainingReport report;
};

/// Trains from `initial`. Throws TrainingError with the epoch index on a
/// non-finite loss or a determinant-guard trip.
FitResult fit(ShwModel initial, const TimeSeriesDataset& ds, const IdentConfig& cfg);

/// Draws the initial model from `arch` with cfg.seed and trains it.
FitResult fit(const TimeSeriesDataset& ds, const ShwArchConfig& arch,
              const IdentConfig& cfg, const ShwInit& init = {});

JacobianStats jacobian_stats(const ShwModel& m, const TimeSeriesDataset& ds);

struct OneStepScores {
  Vector r2_y;  // per output channel, predicting y_{k+1} from record k
  Vector r2_z;  // per constraint channel, predicting z_k
};

/// One-step prediction R^2. The state is reconstructed from y_k, the model
/// is integrated over [t_k, t_{k+1}] with u and d interpolated linearly
/// between the samples, and y_{k+1} is read out through Phi^{-1}.
OneStepScores one_step_scores(const ShwModel& m, const TimeSeriesDataset& ds);

}  // namespace shwmpc
