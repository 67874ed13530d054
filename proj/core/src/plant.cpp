#include "shwmpc/plant.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <random>
#include <sstream>

#include "shwmpc/error.hpp"

namespace shwmpc {
namespace {

}  // namespace

SyntheticPlant::SyntheticPlant(const PlantConfig& cfg) : cfg_(cfg) {
  std::mt19937_64 rng(cfg.seed);
  if (cfg.mode == PlantMode::kRealizable) {
    ShwArchConfig arch;
    arch.dims = dims_;
    arch.bnn_depth = 2;
    arch.bnn_width = cfg.width;
    arch.picnn_depth = 2;
    arch.picnn_width = cfg.width;
    arch.dyn_width = cfg.width;
    arch.delta = cfg.delta;
    arch.xi_state_only = cfg.z_state_only;
    ShwInit init;
    init.psi = {0.2, 0.1};
    init.phi = {0.1, 0.05};
    init.xi = {0.3, -1.5, 0.6};
    init.dyn_stddev = 0.1;
    init.a_diag = -1.0;
    init.a_noise = 0.1;
    init.b_noise = 0.1;
    init.c_noise = 0.05;
    truth_ = make_shw_model(arch, rng, init);
  } else {
    std::normal_distribution<double> n01(0.0, 1.0);
    coupling_ = Matrix::Zero(3, 3);
    input_gain_ = Matrix::Identity(3, 3);
    dist_gain_ = Matrix::Zero(3, 2);
    for (int i = 0; i < 3; ++i) {
      for (int j = 0; j < 3; ++j) {
        if (i != j) coupling_(i, j) = 0.15 * n01(rng);
        input_gain_(i, j) += 0.15 * n01(rng);
      }
      for (int j = 0; j < 2; ++j) dist_gain_(i, j) = 0.25 * n01(rng);
    }
  }
}

const ShwModel& SyntheticPlant::truth() const {
  if (cfg_.mode != PlantMode::kRealizable) throw Error("plant: no generator model in this mode");
  return truth_;
}

Vector SyntheticPlant::rhs(const Vector& x, const Vector& u, const Vector& d) const {
  if (cfg_.mode == PlantMode::kRealizable) return continuous_rhs(truth_, x, u, d);
  Vector sat = (1.5 * u.array()).tanh().matrix();
  Vector f = -x - 0.4 * x.array().cube().matrix() + coupling_ * x + input_gain_ * sat +
             dist_gain_ * d;
  return f;
}

Vector SyntheticPlant::output_y(const Vector& x, const Vector& d) const {
  if (cfg_.mode == PlantMode::kRealizable) return bnn_inverse(truth_.phi, x, d);
  return x + 0.2 * x.array().tanh().matrix();
}

Vector SyntheticPlant::output_z(const Vector& x, const Vector& u, const Vector& d) const {
  if (cfg_.mode == PlantMode::kRealizable) {
    return eval_constraint(truth_, x, bnn_forward(truth_.psi, u, d), d);
  }
  Vector z(1);
  const double s = x(0) + 0.5 * x(1);
  z(0) = 0.3 + 0.25 * s * s + 0.15 * std::pow(x(1) - x(2), 2) + 0.1 * std::tanh(1.5 * u(0)) +
         0.05 * d(0);
  return z;
}

Vector SyntheticPlant::output_ydot(const Vector& x, const Vector& xdot, const Vector& d,
                                   const Vector& ddot) const {
  if (cfg_.mode == PlantMode::kRealizable) {
    const Vector y = bnn_inverse(truth_.phi, x, d);
    const Matrix jy = bnn_jacobian(truth_.phi, y, d);
    const Matrix jd = bnn_jacobian_eta(truth_.phi, y, d);
    return jy.partialPivLu().solve(xdot - jd * ddot);
  }
  const Vector sech2 = (1.0 - x.array().tanh().square()).matrix();
  return (1.0 + 0.2 * sech2.array()).matrix().cwiseProduct(xdot);
}

Vector SyntheticPlant::equilibrium(const Vector& u, const Vector& d) const {
  if (cfg_.mode == PlantMode::kRealizable) {
    const DynValues dv = eval_dynamics(truth_, d);
    return -dv.a.partialPivLu().solve(dv.b * bnn_forward(truth_.psi, u, d) + dv.c);
  }
  Vector x = Vector::Zero(3);
  auto hold = [&](double) { return d; };
  for (int i = 0; i < 4000; ++i) x = rk4_step(x, u, hold, 0.0, 0.025);
  return x;
}

Vector SyntheticPlant::rk4_step(const Vector& x, const Vector& u,
                                const std::function<Vector(double)>& d, double t,
                                double h) const {
  const Vector dm = d(t + 0.5 * h);
  const Vector k1 = rhs(x, u, d(t));
  const Vector k2 = rhs(x + 0.5 * h * k1, u, dm);
  const Vector k3 = rhs(x + 0.5 * h * k2, u, dm);
  const Vector k4 = rhs(x + h * k3, u, d(t + h));
  return x + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
}

Vector Multisine::value(double t) const {
  Vector v = bias;
  for (std::size_t c = 0; c < amp.size(); ++c)
    for (std::size_t k = 0; k < amp[c].size(); ++k)
      v(c) += amp[c][k] * std::sin(2.0 * std::numbers::pi * freq[c][k] * t + phase[c][k]);
  return v;
}

Vector Multisine::derivative(double t) const {
  Vector v = Vector::Zero(bias.size());
  for (std::size_t c = 0; c < amp.size(); ++c)
    for (std::size_t k = 0; k < amp[c].size(); ++k) {
      const double w = 2.0 * std::numbers::pi * freq[c][k];
      v(c) += amp[c][k] * w * std::cos(w * t + phase[c][k]);
    }
  return v;
}

Vector FilteredSteps::value(double t) const {
  const auto it = std::upper_bound(times.begin(), times.end(), t);
  const std::size_t j = it == times.begin() ? 0 : static_cast<std::size_t>(it - times.begin()) - 1;
  const double s = t - times[j];
  const Vector e0 = start_values[j] - levels[j];
  const Vector c = start_slopes[j] + e0 / tau;
  return levels[j] + (e0 + c * s) * std::exp(-s / tau);
}

Vector Excitation::u(double t) const {
  if (zero) return Vector::Zero(lower.size());
  // Smooth saturation into the open box.
  const Vector mid = 0.5 * (lower + upper);
  const Vector half = 0.5 * (upper - lower);
  const Vector raw = steps.value(t) + u_sines.value(t);
  return mid + half.cwiseProduct(raw.cwiseQuotient(half).array().tanh().matrix());
}

Vector Excitation::d(double t) const {
  if (zero) return Vector::Zero(d_signal.bias.size());
  return d_signal.value(t);
}

Vector Excitation::ddot(double t) const {
  if (zero) return Vector::Zero(d_signal.bias.size());
  return d_signal.derivative(t);
}

namespace {

Multisine random_multisine(std::mt19937_64& rng, int channels, int terms, double amplitude,
                           double max_hz, double min_hz) {
  std::uniform_real_distribution<double> ph(0.0, 2.0 * std::numbers::pi);
  std::uniform_real_distribution<double> fq(min_hz, max_hz);
  Multisine m;
  m.bias = Vector::Zero(channels);
  m.amp.assign(channels, {});
  m.freq.assign(channels, {});
  m.phase.assign(channels, {});
  for (int c = 0; c < channels; ++c) {
    for (int k = 0; k < terms; ++k) {
      m.amp[c].push_back(amplitude / terms);
      m.freq[c].push_back(fq(rng));
      m.phase[c].push_back(ph(rng));
    }
  }
  return m;
}

}  // namespace

Excitation make_excitation(const ExcitationConfig& cfg, double duration, const Vector& lower,
                           const Vector& upper) {
  if (!(duration > 0.0)) throw ConfigError("excitation duration must be positive");
  std::mt19937_64 rng(cfg.seed);
  Excitation e;
  e.lower = lower;
  e.upper = upper;
  e.zero = cfg.zero;
  const int nu = static_cast<int>(lower.size());
  const Vector half = 0.5 * (upper - lower);
  std::exponential_distribution<double> hold(1.0 / cfg.step_hold_mean);
  std::uniform_real_distribution<double> level(-1.0, 1.0);
  FilteredSteps& s = e.steps;
  s.tau = cfg.step_tau;
  double t = 0.0;
  Vector cur = Vector::Zero(nu);
  Vector slope = Vector::Zero(nu);
  while (t <= duration) {
    Vector lv(nu);
    for (int k = 0; k < nu; ++k) lv(k) = cfg.step_amplitude * half(k) * level(rng);
    s.times.push_back(t);
    s.levels.push_back(lv);
    s.start_values.push_back(cur);
    s.start_slopes.push_back(slope);
    const double dt = std::max(0.2, hold(rng));
    const Vector e0 = cur - lv;
    const Vector c = slope + e0 / s.tau;
    const double decay = std::exp(-dt / s.tau);
    cur = lv + (e0 + c * dt) * decay;
    slope = (slope - c * (dt / s.tau)) * decay;
    t += dt;
  }
  e.u_sines = random_multisine(rng, nu, cfg.sine_terms, cfg.sine_amplitude, cfg.sine_max_hz,
                               0.1 * cfg.sine_max_hz);
  e.d_signal = random_multisine(rng, 2, 3, cfg.d_amplitude, cfg.d_max_hz, 0.2 * cfg.d_max_hz);
  return e;
}

TimeSeriesDataset generate_dataset(const SyntheticPlant& plant, const ExcitationConfig& exc,
                                   double duration, double dt_sample, const NoiseConfig& noise,
                                   int substeps) {
  if (!(dt_sample > 0.0) || substeps < 1) throw ConfigError("bad sampling settings");
  const Excitation e = make_excitation(exc, duration, plant.u_lower(), plant.u_upper());
  const auto n = static_cast<std::size_t>(std::floor(duration / dt_sample + 1e-9)) + 1;
  const double h = dt_sample / substeps;

  TimeSeriesDataset ds;
  ds.dims = plant.dims();
  Vector x = plant.equilibrium(e.u(0.0), e.d(0.0));
  for (std::size_t k = 0; k < n; ++k) {
    const double t = static_cast<double>(k) * dt_sample;
    if (!x.allFinite() || x.norm() > 1e6) {
      std::ostringstream os;
      os << "plant state blew up at t = " << t;
      throw ExcitationRejectedError(os.str());
    }
    Record r;
    r.t = t;
    r.u = e.u(t);
    r.d = e.d(t);
    r.ddot = e.ddot(t);
    const Vector xdot = plant.rhs(x, r.u, r.d);
    r.y = plant.output_y(x, r.d);
    r.z = plant.output_z(x, r.u, r.d);
    r.ydot = plant.output_ydot(x, xdot, r.d, r.ddot);
    ds.records.push_back(std::move(r));
    if (k + 1 == n) break;
    for (int s = 0; s < substeps; ++s) {
      const double ts = t + s * h;
      const double tm = ts + 0.5 * h;
      const Vector k1 = plant.rhs(x, e.u(ts), e.d(ts));
      const Vector k2 = plant.rhs(x + 0.5 * h * k1, e.u(tm), e.d(tm));
      const Vector k3 = plant.rhs(x + 0.5 * h * k2, e.u(tm), e.d(tm));
      const Vector k4 = plant.rhs(x + h * k3, e.u(ts + h), e.d(ts + h));
      x += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    }
  }

  if (noise.y_fraction > 0.0 || noise.z_fraction > 0.0) {
    std::mt19937_64 rng(noise.seed);
    std::normal_distribution<double> n01(0.0, 1.0);
    auto stddev = [&](auto get, int dim) {
      Vector mean = Vector::Zero(dim), sq = Vector::Zero(dim);
      for (const Record& r : ds.records) {
        mean += get(r);
        sq += get(r).cwiseAbs2();
      }
      mean /= static_cast<double>(n);
      return Vector((sq / static_cast<double>(n) - mean.cwiseAbs2()).cwiseMax(0.0).cwiseSqrt());
    };
    const Vector sy = stddev([](const Record& r) -> const Vector& { return r.y; }, ds.dims.n_y);
    const Vector sz = stddev([](const Record& r) -> const Vector& { return r.z; }, ds.dims.n_z);
    for (Record& r : ds.records) {
      for (int k = 0; k < ds.dims.n_y; ++k) r.y(k) += noise.y_fraction * sy(k) * n01(rng);
      for (int k = 0; k < ds.dims.n_z; ++k) r.z(k) += noise.z_fraction * sz(k) * n01(rng);
    }
  }
  return ds;
}

TrajectoryLog closed_loop(const SyntheticPlant& plant, const Controller& controller,
                          const Scenario& scenario, double duration, double delta) {
  if (!(delta > 0.0) || !(duration > 0.0)) throw ConfigError("bad closed-loop timing");
  const int sub = 20;
  const double h = delta / sub;
  const auto steps = static_cast<std::size_t>(std::floor(duration / delta + 1e-9));
  TrajectoryLog log;
  Vector x = scenario.x0.size() > 0
                 ? scenario.x0
                 : plant.equilibrium(Vector::Zero(plant.dims().n_u), scenario.disturbance(0.0));
  const Vector lo = plant.u_lower(), hi = plant.u_upper();
  Vector u_prev = Vector::Zero(plant.dims().n_u);
  for (std::size_t k = 0; k <= steps; ++k) {
    const double t = static_cast<double>(k) * delta;
    const Vector d = scenario.disturbance(t);
    const Vector r = scenario.reference(t);
    const Vector y = plant.output_y(x, d);
    const Vector z_meas = plant.output_z(x, u_prev, d);
    Vector u;
    try {
      u = controller(t, y, z_meas, d, r);
      if (u.size() != plant.dims().n_u || !u.allFinite()) {
        throw Error("controller returned an invalid input");
      }
      if ((u - lo).minCoeff() < -1e-9 || (hi - u).minCoeff() < -1e-9) {
        throw Error("controller input outside the box");
      }
    } catch (const std::exception& ex) {
      log.aborted = true;
      log.error = ex.what();
      return log;
    }
    log.t.push_back(t);
    log.u.push_back(u);
    log.d.push_back(d);
    log.r.push_back(r);
    log.y.push_back(y);
    log.z.push_back(plant.output_z(x, u, d));
    log.x.push_back(x);
    if (k == steps) break;
    for (int s = 0; s < sub; ++s) x = plant.rk4_step(x, u, scenario.disturbance, t + s * h, h);
    if (!x.allFinite()) {
      log.aborted = true;
      log.error = "plant state became non-finite";
      return log;
    }
    u_prev = u;
  }
  return log;
}

void write_trajectory_csv(const std::string& path, const TrajectoryLog& log,
                          const std::string& comment) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error("cannot open '" + path + "' for writing");
  if (!comment.empty()) f << "# " << comment << "\n";
  auto head = [&](const char* p, std::size_t n) {
    for (std::size_t k = 1; k <= n; ++k) f << ',' << p << k;
  };
  f << "t";
  if (!log.t.empty()) {
    head("u_", log.u[0].size());
    head("d_", log.d[0].size());
    head("r_", log.r[0].size());
    head("y_", log.y[0].size());
    head("z_", log.z[0].size());
  }
  f << "\n";
  auto vals = [&](const Vector& v) {
    for (Eigen::Index k = 0; k < v.size(); ++k) f << ',' << format_double(v(k));
  };
  for (std::size_t i = 0; i < log.t.size(); ++i) {
    f << format_double(log.t[i]);
    vals(log.u[i]);
    vals(log.d[i]);
    vals(log.r[i]);
    vals(log.y[i]);
    vals(log.z[i]);
    f << "\n";
  }
  if (!f) throw Error("write to '" + path + "' failed");
}

}  // namespace shwmpc
