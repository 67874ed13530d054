#pragma once

// Synthetic ground-truth plant with 3 inputs, 3 outputs, 1 constraint output
// and 2 disturbances. Two modes:
//   realizable    the plant is itself a structured H-W model (fixed seed)
//   misspecified  polynomial drift with a saturating input map

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "shwmpc/dataset.hpp"
#include "shwmpc/shw_model.hpp"

namespace shwmpc {

enum class PlantMode { kRealizable, kMisspecified };

struct PlantConfig {
  PlantMode mode = PlantMode::kRealizable;
  std::uint64_t seed = 6;
  double delta = 0.1;
  // Constraint output of the realizable plant depends on x only.
  bool z_state_only = false;
  // Width of the generator networks (realizable mode).
  int width = 8;
};

class SyntheticPlant {
 public:
  explicit SyntheticPlant(const PlantConfig& cfg);

  const PlantConfig& config() const { return cfg_; }
  const ShwDims& dims() const { return dims_; }
  int state_dim() const { return 3; }
  /// The generator model (realizable mode only).
  const ShwModel& truth() const;

  Vector rhs(const Vector& x, const Vector& u, const Vector& d) const;
  Vector output_y(const Vector& x, const Vector& d) const;
  Vector output_z(const Vector& x, const Vector& u, const Vector& d) const;
  /// dy/dt along the trajectory for state derivative xdot and ddot.
  Vector output_ydot(const Vector& x, const Vector& xdot, const Vector& d,
                     const Vector& ddot) const;
  /// Steady state under constant (u, d).
  Vector equilibrium(const Vector& u, const Vector& d) const;
  /// One RK4 step with u held and d given as a function of time.
  Vector rk4_step(const Vector& x, const Vector& u,
                  const std::function<Vector(double)>& d, double t, double h) const;

  Vector u_lower() const { return Vector::Constant(3, -1.0); }
  Vector u_upper() const { return Vector::Constant(3, 1.0); }

 private:
  PlantConfig cfg_;
  ShwDims dims_{3, 3, 1, 2};
  ShwModel truth_;
  Matrix coupling_;
  Matrix input_gain_;
  Matrix dist_gain_;
};

/// Vector-valued sum of sines per channel; exact derivative available.
struct Multisine {
  Vector bias;
  std::vector<std::vector<double>> amp, freq, phase;  // [channel][term]

  Vector value(double t) const;
  Vector derivative(double t) const;
};

/// Random levels held for random durations, passed through a critically
/// damped second-order filter (so the signal is C^1); closed form in t.
struct FilteredSteps {
  std::vector<double> times;         // switch times, times[0] = 0
  std::vector<Vector> levels;        // target level from times[j]
  std::vector<Vector> start_values;  // filter output at times[j]
  std::vector<Vector> start_slopes;
  double tau = 0.3;

  Vector value(double t) const;
};

struct ExcitationConfig {
  double step_hold_mean = 2.0;
  double step_tau = 0.3;
  double step_amplitude = 1.3;  // before the smooth saturation
  double sine_amplitude = 0.15;
  int sine_terms = 3;
  double sine_max_hz = 0.5;
  double d_amplitude = 0.7;
  double d_max_hz = 0.05;
  bool zero = false;  // u = 0, d = 0
  std::uint64_t seed = 1;
};

struct Excitation {
  FilteredSteps steps;
  Multisine u_sines;
  Multisine d_signal;
  Vector lower, upper;
  bool zero = false;

  Vector u(double t) const;
  Vector d(double t) const;
  Vector ddot(double t) const;
};

Excitation make_excitation(const ExcitationConfig& cfg, double duration,
                           const Vector& lower, const Vector& upper);

struct NoiseConfig {
  // Gaussian noise std as a fraction of each channel's standard deviation.
  double y_fraction = 0.0;
  double z_fraction = 0.0;
  std::uint64_t seed = 2;
};

/// Samples the plant every dt_sample on an RK4 grid of dt_sample / substeps.
/// Derivatives are exact evaluations of the ODE right-hand side. Throws
/// ExcitationRejectedError if the state blows up.
TimeSeriesDataset generate_dataset(const SyntheticPlant& plant, const ExcitationConfig& exc,
                                   double duration, double dt_sample,
                                   const NoiseConfig& noise = {}, int substeps = 20);

struct Scenario {
  std::function<Vector(double)> reference;
  std::function<Vector(double)> disturbance;
  // Initial plant state; empty means equilibrium at u = 0, d(0).
  Vector x0;
};

/// Control input from (t, y, z, d, r); must lie in the input box.
using Controller = std::function<Vector(double t, const Vector& y, const Vector& z,
                                        const Vector& d, const Vector& r)>;

struct TrajectoryLog {
  std::vector<double> t;
  std::vector<Vector> u, d, r, y, z, x;
  bool aborted = false;
  std::string error;
};

/// RK4 at delta / 20 with u held over each period delta. A controller
/// exception aborts the run and returns the partial log.
TrajectoryLog closed_loop(const SyntheticPlant& plant, const Controller& controller,
                          const Scenario& scenario, double duration, double delta);

void write_trajectory_csv(const std::string& path, const TrajectoryLog& log,
                          const std::string& comment = {});

}  // namespace shwmpc
