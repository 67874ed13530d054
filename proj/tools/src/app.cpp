#include "app.hpp"

#include <chrono>
#include <cmath>
#include <filesystem>
#include <iostream>
#include <map>
#include <random>
#include <sstream>

#include <CLI11.hpp>

#include "config.hpp"
#include "shwmpc/baseline.hpp"
#include "shwmpc/cbf.hpp"
#include "shwmpc/error.hpp"
#include "shwmpc/ident.hpp"
#include "shwmpc/model_io.hpp"
#include "shwmpc/ocp.hpp"
#include "shwmpc/plant.hpp"

namespace shwmpc::cli {
namespace {

namespace fs = std::filesystem;

struct CheckFailed : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Context {
  RunConfig cfg;
  fs::path out;
  bool check = false;
  std::string command;
};

// Collects metrics and pass/fail checks for the run report.
class Report {
 public:
  void metric(const std::string& key, const json& value) { metrics_[key] = value; }
  void check(const std::string& name, double value, double threshold, bool passed) {
    checks_.push_back({{"name", name}, {"value", value}, {"threshold", threshold}, {"passed", passed}});
    if (!passed) failed_.push_back(name);
  }
  const std::vector<std::string>& failed() const { return failed_; }

  void write(const Context& ctx, double seconds) const {
    json j;
    j["command"] = ctx.command;
    j["tool_version"] = "0.1.0";
    j["config_hash"] = ctx.cfg.hash;
    j["seed"] = ctx.cfg.seed;
    j["config"] = ctx.cfg.doc;
    j["metrics"] = metrics_;
    j["checks"] = checks_;
    j["check_mode"] = ctx.check;
    j["seconds"] = seconds;
    write_text_file((ctx.out / (ctx.command + "_report.json")).string(), j.dump(2) + "\n");
  }

 private:
  json metrics_ = json::object();
  json checks_ = json::array();
  std::vector<std::string> failed_;
};

std::string stamp(const Context& ctx) {
  return "config_hash=" + ctx.cfg.hash + " seed=" + std::to_string(ctx.cfg.seed);
}

ArtifactMeta meta_of(const Context& ctx, const std::string& kind) {
  return {ctx.cfg.hash, ctx.cfg.seed, kind};
}

fs::path path_or(const json& j, const fs::path& fallback) {
  return j.is_null() ? fallback : fs::path(j.get<std::string>());
}

fs::path data_path(const Context& ctx) { return path_or(ctx.cfg.doc["paths"]["data"], ctx.out / "data.csv"); }
fs::path model_path(const Context& ctx) { return path_or(ctx.cfg.doc["paths"]["model"], ctx.out / "model.json"); }

void require_file(const fs::path& p, const char* what) {
  if (!fs::exists(p)) {
    throw ConfigError(std::string(what) + " '" + p.string() + "' does not exist");
  }
}

PlantConfig plant_config(const json& j) {
  PlantConfig pc;
  const std::string mode = j["mode"].get<std::string>();
  if (mode == "realizable") {
    pc.mode = PlantMode::kRealizable;
  } else if (mode == "misspecified") {
    pc.mode = PlantMode::kMisspecified;
  } else {
    throw ConfigError("config: plant.mode must be 'realizable' or 'misspecified', got '" + mode + "'");
  }
  pc.seed = j["seed"].get<std::uint64_t>();
  pc.delta = j["delta"].get<double>();
  pc.z_state_only = j["z_state_only"].get<bool>();
  if (!(pc.delta > 0.0)) throw ConfigError("config: plant.delta must be positive");
  return pc;
}

ShwArchConfig arch_config(const json& j, const ShwDims& dims, double delta) {
  ShwArchConfig a;
  a.dims = dims;
  a.bnn_depth = j["bnn_depth"].get<int>();
  a.bnn_width = j["bnn_width"].get<int>();
  a.picnn_depth = j["picnn_depth"].get<int>();
  a.picnn_width = j["picnn_width"].get<int>();
  a.dyn_width = j["dyn_width"].get<int>();
  a.xi_state_only = j["xi_state_only"].get<bool>();
  a.delta = delta;
  if (a.bnn_depth < 1 || a.bnn_width < 1 || a.picnn_depth < 1 || a.picnn_width < 1 || a.dyn_width < 1) {
    throw ConfigError("config: model depths and widths must be >= 1");
  }
  return a;
}

OcpConfig ocp_config(const json& j) {
  OcpConfig c;
  c.horizon = j["horizon"].get<int>();
  c.u_lower = to_vector(j["u_lower"], "ocp.u_lower");
  c.u_upper = to_vector(j["u_upper"], "ocp.u_upper");
  c.z_weight = to_vector(j["z_weight"], "ocp.z_weight");
  c.z_ceiling = to_vector(j["z_ceiling"], "ocp.z_ceiling");
  c.z_penalty = j["z_penalty"].get<bool>();
  c.hard_z = j["hard_z"].get<bool>();
  c.max_iterations = j["max_iterations"].get<int>();
  c.tolerance = j["tolerance"].get<double>();
  if (c.horizon < 1) throw ConfigError("config: ocp.horizon must be >= 1");
  if (!(c.tolerance > 0.0)) throw ConfigError("config: ocp.tolerance must be positive");
  return c;
}

/// Steady output of the model at constant (u, d).
Vector model_steady_output(const ShwModel& m, const Vector& u, const Vector& d) {
  const DynValues dv = eval_dynamics(m, d);
  const Vector x = -dv.a.partialPivLu().solve(dv.b * bnn_forward(m.psi, u, d) + dv.c);
  return bnn_inverse(m.phi, x, d);
}

struct Target {
  Vector d, y0, r;
};

Target target_of(const json& j, const ShwModel& m) {
  Target t;
  t.d = to_vector(j["d"], "target.d");
  if (t.d.size() == 0) t.d = Vector::Zero(m.dims.n_d);
  t.y0 = to_vector(j["y0"], "target.y0");
  if (t.y0.size() == 0) t.y0 = model_steady_output(m, Vector::Zero(m.dims.n_u), t.d);
  t.r = to_vector(j["r"], "target.r");
  if (t.r.size() == 0) {
    const Vector u_ref = to_vector(j["u_ref"], "target.u_ref");
    if (u_ref.size() != m.dims.n_u) throw ConfigError("config: target.u_ref must have n_u entries");
    t.r = model_steady_output(m, u_ref, t.d);
  }
  if (t.d.size() != m.dims.n_d || t.y0.size() != m.dims.n_y || t.r.size() != m.dims.n_y) {
    throw ConfigError("config: target vectors do not match the model dimensions");
  }
  return t;
}

std::vector<double> sweep_grid(const json& j) {
  const int points = j["points"].get<int>();
  const double from = j["from"].get<double>();
  const double to = j["to"].get<double>();
  if (points < 2) throw ConfigError("config: sweep.points must be >= 2");
  if (!(to > from)) throw ConfigError("config: sweep.to must exceed sweep.from");
  std::vector<double> g;
  for (int i = 0; i < points; ++i) g.push_back(from + (to - from) * i / (points - 1));
  return g;
}

json to_json(const Vector& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

// ---------------------------------------------------------------------------

void cmd_generate(const Context& ctx, Report& rep) {
  const json& d = ctx.cfg.doc["data"];
  const SyntheticPlant plant(plant_config(ctx.cfg.doc["plant"]));
  ExcitationConfig exc;
  exc.seed = seed_or(d["excitation_seed"], ctx.cfg.seed);
  NoiseConfig noise;
  noise.y_fraction = d["noise_y"].get<double>();
  noise.z_fraction = d["noise_z"].get<double>();
  noise.seed = seed_or(d["noise_seed"], ctx.cfg.seed + 1);
  const double duration = d["duration"].get<double>();
  const double dt = d["dt"].get<double>();
  if (!(duration > 0.0) || !(dt > 0.0)) throw ConfigError("config: data.duration and data.dt must be positive");
  const TimeSeriesDataset ds = generate_dataset(plant, exc, duration, dt, noise);
  const fs::path out = data_path(ctx);
  write_dataset_csv(out.string(), ds, stamp(ctx));

  Vector lo = ds.records[0].u, hi = lo;
  for (const Record& r : ds.records) {
    lo = lo.cwiseMin(r.u);
    hi = hi.cwiseMax(r.u);
  }
  const Vector coverage = ((hi - lo).array() / (plant.u_upper() - plant.u_lower()).array()).matrix();
  rep.metric("records", ds.size());
  rep.metric("u_coverage", to_json(coverage));
  rep.metric("path", out.string());
  rep.check("u_coverage_min", coverage.minCoeff(), 0.8, coverage.minCoeff() >= 0.8);
}

void cmd_train(const Context& ctx, Report& rep) {
  const fs::path dp = data_path(ctx);
  require_file(dp, "dataset");
  const TimeSeriesDataset ds = read_dataset_csv(dp.string());
  const json& ij = ctx.cfg.doc["ident"];
  IdentConfig ic;
  ic.epochs = ij["epochs"].get<int>();
  ic.batch_size = ij["batch_size"].get<int>();
  ic.learning_rate = ij["learning_rate"].get<double>();
  ic.final_lr_fraction = ij["final_lr_fraction"].get<double>();
  ic.validation_fraction = ij["validation_fraction"].get<double>();
  ic.lbfgs_iterations = ij["lbfgs_iterations"].get<int>();
  ic.seed = ctx.cfg.seed;
  const Vector ke = to_vector(ij["k_e_diag"], "ident.k_e_diag");
  if (ke.size() > 0) ic.k_e = ke.asDiagonal();
  ic.validate(ds.dims);
  const double delta = ctx.cfg.doc["plant"]["delta"].get<double>();
  const ShwArchConfig arch = arch_config(ctx.cfg.doc["model"], ds.dims, delta);
  const FitResult fr = fit(ds, arch, ic);
  const fs::path mp = model_path(ctx);
  save_model(mp.string(), fr.model, meta_of(ctx, "shw-model"));

  const auto [train, val] = split_tail(ds, ic.validation_fraction);
  const OneStepScores sc = one_step_scores(fr.model, val.empty() ? train : val);
  rep.metric("path", mp.string());
  rep.metric("params", fr.model.num_params());
  rep.metric("train_loss", fr.report.final_train_loss);
  rep.metric("val_loss", fr.report.final_val_loss);
  rep.metric("r2_y", to_json(sc.r2_y));
  rep.metric("r2_z", to_json(sc.r2_z));
  rep.metric("min_abs_det_dphi", fr.report.jacobian.min_abs_det);
  rep.metric("training_seconds", fr.report.seconds);
  const double r2_min = std::min(sc.r2_y.minCoeff(), sc.r2_z.minCoeff());
  const double vl_max = ij["check_val_loss"].get<double>();
  const double r2_req = ij["check_r2"].get<double>();
  rep.check("val_loss", fr.report.final_val_loss, vl_max, fr.report.final_val_loss <= vl_max);
  rep.check("one_step_r2_min", r2_min, r2_req, r2_min >= r2_req);
}

void cmd_solve(const Context& ctx, Report& rep) {
  const fs::path mp = model_path(ctx);
  require_file(mp, "model");
  const ShwModel m = load_model(mp.string());
  const Target tg = target_of(ctx.cfg.doc["target"], m);
  const OcpConfig oc = ocp_config(ctx.cfg.doc["ocp"]);
  const Vector x0 = bnn_forward(m.phi, tg.y0, tg.d);
  const OcpInstance inst = make_instance(m, x0, tg.d, tg.r, oc);
  const OcpSolution sol = solve(inst);

  std::ostringstream csv;
  csv << "# " << stamp(ctx) << "\n";
  const int nu = m.dims.n_u, nz = m.dims.n_z;
  csv << "k";
  for (int i = 1; i <= nu; ++i) csv << ",u_" << i;
  for (int i = 1; i <= nu; ++i) csv << ",v_" << i;
  for (int i = 1; i <= nz; ++i) csv << ",z_" << i;
  csv << "\n";
  const auto z = stage_z(inst, sol.v);
  for (int k = 0; k < inst.n; ++k) {
    csv << k;
    for (int i = 0; i < nu; ++i) csv << ',' << format_double(sol.u(k * nu + i));
    for (int i = 0; i < nu; ++i) csv << ',' << format_double(sol.v(k * nu + i));
    for (int i = 0; i < nz; ++i) csv << ',' << format_double(z[k](i));
    csv << "\n";
  }
  write_text_file((ctx.out / "solution.csv").string(), csv.str());
  rep.metric("objective", sol.objective);
  rep.metric("kkt_residual", sol.kkt_residual_inf);
  rep.metric("iterations", sol.iterations);
  rep.metric("first_u", to_json(sol.first_u(nu)));
  rep.check("kkt_residual", sol.kkt_residual_inf, oc.tolerance, sol.kkt_residual_inf <= oc.tolerance);
}

void sweep_checks(const SweepTable& t, Report& rep, double max_disagreement) {
  double worst = 0.0;
  for (double d : t.disagreement) worst = std::max(worst, std::isnan(d) ? INFINITY : d);
  rep.metric("failures", t.failures);
  rep.metric("max_disagreement", worst);
  rep.metric("median_quotient", t.median_quotient);
  rep.metric("max_quotient", t.max_quotient);
  rep.check("failures", t.failures, 0, t.failures == 0);
  rep.check("max_disagreement", worst, max_disagreement, worst <= max_disagreement);
  const double bound = 10.0 * t.median_quotient;
  rep.check("max_quotient_vs_10x_median", t.max_quotient, bound,
            t.max_quotient <= bound || t.max_quotient <= 1e-12);
}

void cmd_sweep(const Context& ctx, Report& rep) {
  const fs::path mp = model_path(ctx);
  require_file(mp, "model");
  const ShwModel m = load_model(mp.string());
  const Target tg = target_of(ctx.cfg.doc["target"], m);
  const OcpConfig oc = ocp_config(ctx.cfg.doc["ocp"]);
  const json& sj = ctx.cfg.doc["sweep"];
  const int channel = sj["channel"].get<int>();
  if (channel < 0 || channel >= m.dims.n_y) throw ConfigError("config: sweep.channel out of range");
  const int inits = sj["inits"].get<int>();
  if (inits < 1) throw ConfigError("config: sweep.inits must be >= 1");
  const SweepTable t = control_law_sweep(m, oc, tg.d, tg.r, tg.y0, Vector::Unit(m.dims.n_y, channel),
                                         sweep_grid(sj), inits, ctx.cfg.seed);
  write_sweep_csv((ctx.out / "sweep.csv").string(), t, stamp(ctx));
  sweep_checks(t, rep, 1e-6);
}

struct Schedule {
  std::vector<double> times;
  std::vector<Vector> values;
  Vector at(double t) const {
    std::size_t k = 0;
    while (k + 1 < times.size() && t >= times[k + 1]) ++k;
    return values[k];
  }
};

void cmd_mpc(const Context& ctx, Report& rep) {
  const fs::path mp = model_path(ctx);
  require_file(mp, "model");
  const ShwModel m = load_model(mp.string());
  const SyntheticPlant plant(plant_config(ctx.cfg.doc["plant"]));
  const json& mj = ctx.cfg.doc["mpc"];
  OcpConfig oc = ocp_config(ctx.cfg.doc["ocp"]);
  const Vector mpc_zbar = to_vector(mj["z_ceiling"], "mpc.z_ceiling");
  if (mpc_zbar.size() > 0) oc.z_ceiling = mpc_zbar;
  const double duration = mj["duration"].get<double>();
  const double delta = ctx.cfg.doc["plant"]["delta"].get<double>();

  const Vector d_bias = to_vector(mj["disturbance"]["bias"], "mpc.disturbance.bias");
  const Vector d_amp = to_vector(mj["disturbance"]["amplitude"], "mpc.disturbance.amplitude");
  const double d_period = mj["disturbance"]["period"].get<double>();
  if (d_bias.size() != plant.dims().n_d || d_amp.size() != plant.dims().n_d) {
    throw ConfigError("config: mpc.disturbance vectors need n_d entries");
  }
  auto dist = [=](double t) -> Vector {
    return d_bias + d_amp * std::sin(2.0 * M_PI * t / d_period);
  };

  Schedule ref;
  for (const json& e : mj["reference"]) {
    if (!e.is_object() || !e.contains("t")) throw ConfigError("config: mpc.reference entries need 't'");
    for (auto it = e.begin(); it != e.end(); ++it) {
      if (it.key() != "t" && it.key() != "r" && it.key() != "u_eq") {
        throw ConfigError("config: unknown key 'mpc.reference[]." + it.key() + "'");
      }
    }
    const double t = e["t"].get<double>();
    Vector r;
    if (e.contains("r")) {
      r = to_vector(e["r"], "mpc.reference[].r");
    } else if (e.contains("u_eq")) {
      // Output of the plant at rest under u_eq: stationarily realizable by construction.
      const Vector u = to_vector(e["u_eq"], "mpc.reference[].u_eq");
      r = plant.output_y(plant.equilibrium(u, dist(t)), dist(t));
    } else {
      throw ConfigError("config: mpc.reference entries need 'r' or 'u_eq'");
    }
    if (r.size() != m.dims.n_y) throw ConfigError("config: reference has the wrong dimension");
    ref.times.push_back(t);
    ref.values.push_back(r);
  }
  if (ref.times.empty() || ref.times[0] > 0.0) throw ConfigError("config: mpc.reference must start at t = 0");

  Vector warm;
  int solves = 0;
  double worst_kkt = 0.0;
  const Controller ctrl = [&](double, const Vector& y, const Vector&, const Vector& d,
                              const Vector& r) -> Vector {
    const Vector x0 = bnn_forward(m.phi, y, d);
    const OcpInstance inst = make_instance(m, x0, d, r, oc);
    if (warm.size() != inst.n_v()) warm = 0.5 * (inst.v_lower + inst.v_upper);
    const OcpSolution sol = solve(inst, warm);
    const int nu = m.dims.n_u;
    warm.head(inst.n_v() - nu) = sol.v.tail(inst.n_v() - nu);
    warm.tail(nu) = sol.v.tail(nu);
    ++solves;
    worst_kkt = std::max(worst_kkt, sol.kkt_residual_inf);
    return sol.first_u(nu);
  };
  Scenario sc;
  sc.reference = [&](double t) { return ref.at(t); };
  sc.disturbance = dist;
  const TrajectoryLog log = closed_loop(plant, ctrl, sc, duration, delta);
  write_trajectory_csv((ctx.out / "trajectory.csv").string(), log, stamp(ctx));
  if (log.aborted) throw SolverError("mpc: closed loop aborted: " + log.error);

  // Tracking error after each transient, relative to the per-channel span.
  const int ny = m.dims.n_y;
  Vector span = Vector::Zero(ny);
  {
    Vector lo = ref.values[0], hi = lo;
    for (const Vector& r : ref.values) {
      lo = lo.cwiseMin(r);
      hi = hi.cwiseMax(r);
    }
    span = hi - lo;
    const double floor = std::max(span.maxCoeff(), 1e-12);
    for (int i = 0; i < ny; ++i) {
      if (span(i) < 1e-9 * floor) span(i) = floor;
    }
  }
  const double settle = mj["settle_time"].get<double>();
  double worst = 0.0;
  for (std::size_t k = 0; k < log.t.size(); ++k) {
    double since = log.t[k];
    for (double ts : ref.times) {
      if (log.t[k] >= ts) since = log.t[k] - ts;
    }
    if (since < settle) continue;
    worst = std::max(worst, ((log.y[k] - log.r[k]).array().abs() / span.array()).maxCoeff());
  }
  double z_excess = -INFINITY;
  const Vector zbar = oc.z_ceiling.size() ? oc.z_ceiling : Vector::Constant(m.dims.n_z, 0.8);
  for (const Vector& z : log.z) z_excess = std::max(z_excess, (z - zbar).maxCoeff());
  rep.metric("solves", solves);
  rep.metric("max_kkt_residual", worst_kkt);
  rep.metric("tracking_error_over_span", worst);
  rep.metric("max_z_minus_ceiling", z_excess);
  const double req = mj["check_tracking"].get<double>();
  rep.check("tracking_error_over_span", worst, req, worst <= req);
}

void cmd_cbf(const Context& ctx, Report& rep) {
  const fs::path mp = model_path(ctx);
  require_file(mp, "model");
  ShwModel m = load_model(mp.string());
  const bool zeroed = !xi_is_state_only(m);
  // The barrier argument needs a Xi without v-dependence.
  if (zeroed) make_xi_state_only(m);
  const json& cj = ctx.cfg.doc["cbf"];
  const Target tg = target_of(ctx.cfg.doc["target"], m);
  CbfConfig cc;
  cc.gamma = to_vector(cj["gamma"], "cbf.gamma");
  cc.z_ceiling = to_vector(cj["z_ceiling"], "cbf.z_ceiling");
  if (cc.z_ceiling.size() == 0) cc.z_ceiling = to_vector(ctx.cfg.doc["ocp"]["z_ceiling"], "ocp.z_ceiling");
  cc.u_lower = to_vector(ctx.cfg.doc["ocp"]["u_lower"], "ocp.u_lower");
  cc.u_upper = to_vector(ctx.cfg.doc["ocp"]["u_upper"], "ocp.u_upper");
  const Vector qd = to_vector(cj["q_diag"], "cbf.q_diag");
  if (qd.size() > 0) cc.q = qd.asDiagonal();
  const std::string conv = cj["convention"].get<std::string>();
  if (conv == "printed") {
    cc.convention = RiccatiConvention::kPrinted;
  } else if (conv == "standard") {
    cc.convention = RiccatiConvention::kStandard;
  } else {
    throw ConfigError("config: cbf.convention must be 'printed' or 'standard'");
  }
  const CbfController c = make_cbf_controller(m, tg.d, tg.r, cc);
  Vector y0 = to_vector(cj["y0"], "cbf.y0");
  if (y0.size() == 0) y0 = tg.y0;
  const Vector x0 = bnn_forward(m.phi, y0, tg.d);
  const int steps = cj["steps"].get<int>();
  const int substeps = cj["substeps"].get<int>();
  const CbfTrajectory tr = cbf_closed_loop(c, m, x0, steps, substeps);
  write_cbf_trajectory_csv((ctx.out / "cbf.csv").string(), tr, stamp(ctx));

  const int samples = cj["lyapunov_samples"].get<int>();
  std::mt19937_64 rng(ctx.cfg.seed);
  std::normal_distribution<double> n01(0.0, 1.0);
  int decreasing = 0;
  for (int i = 0; i < samples; ++i) {
    Vector e(m.dims.n_y);
    for (double& v : e) v = n01(rng);
    if (lyapunov_derivative(c, c.eq.x_bar + 0.5 * e) < 0.0) ++decreasing;
  }
  const double care_res = care_residual(c.a, c.b, c.q, c.p, c.convention);
  int active_steps = 0;
  for (const auto& a : tr.barrier_active) {
    for (bool b : a) active_steps += b ? 1 : 0;
  }
  rep.metric("xi_v_path_zeroed", zeroed);
  rep.metric("max_violation", tr.max_violation);
  rep.metric("barrier_active_steps", active_steps);
  rep.metric("lyapunov_decreasing", decreasing);
  rep.metric("riccati_residual", care_res);
  rep.check("max_violation", tr.max_violation, 1e-3, tr.max_violation <= 1e-3);
  rep.check("lyapunov_decreasing", decreasing, samples, decreasing == samples);
  rep.check("riccati_residual", care_res, 1e-8 * c.q.norm(), care_res <= 1e-8 * c.q.norm());
}

void cmd_baseline(const Context& ctx, Report& rep) {
  const json& bj = ctx.cfg.doc["baseline"];
  const std::string fixture = bj["fixture"].get<std::string>();
  DenseNnModel nn;
  Vector d, y0, r;
  BaselineMpcConfig bc;
  const OcpConfig oc = ocp_config(ctx.cfg.doc["ocp"]);
  bc.max_iterations = oc.max_iterations;
  if (fixture == "fold") {
    nn = fold_model();
    d = Vector::Zero(1);
    y0 = Vector::Zero(1);
    r = Vector::Ones(1);
    bc.horizon = 1;
    bc.z_weight = Vector::Zero(1);
  } else if (fixture == "trained") {
    const fs::path dp = data_path(ctx);
    require_file(dp, "dataset");
    const TimeSeriesDataset ds = read_dataset_csv(dp.string());
    BaselineFitConfig fc;
    fc.width = bj["width"].get<int>();
    fc.epochs = bj["epochs"].get<int>();
    fc.batch_size = bj["batch_size"].get<int>();
    fc.learning_rate = bj["learning_rate"].get<double>();
    fc.validation_fraction = ctx.cfg.doc["ident"]["validation_fraction"].get<double>();
    fc.seed = ctx.cfg.seed;
    const fs::path mp = model_path(ctx);
    ShwModel sm;
    if (fs::exists(mp)) {
      sm = load_model(mp.string());
      fc.match_params = sm.num_params();
    }
    const double delta = ctx.cfg.doc["plant"]["delta"].get<double>();
    const BaselineFitResult fr = baseline_fit(ds, delta, fc);
    nn = fr.model;
    rep.metric("nn_params", nn.num_params());
    rep.metric("structured_params", fc.match_params);
    rep.metric("validation_r2", fr.validation_r2);
    double r2 = 1.0;
    for (double v : fr.validation_r2) r2 = std::min(r2, v);
    const double req = bj["check_r2"].get<double>();
    rep.check("validation_r2_min", r2, req, r2 >= req);
    d = to_vector(ctx.cfg.doc["target"]["d"], "target.d");
    if (d.size() == 0) d = Vector::Zero(nn.dims.n_d);
    if (fc.match_params > 0) {
      const Target tg = target_of(ctx.cfg.doc["target"], sm);
      y0 = tg.y0;
      r = tg.r;
    } else {
      y0 = to_vector(ctx.cfg.doc["target"]["y0"], "target.y0");
      r = to_vector(ctx.cfg.doc["target"]["r"], "target.r");
      if (y0.size() == 0 || r.size() == 0) {
        throw ConfigError("config: baseline without a structured model needs target.y0 and target.r");
      }
    }
    bc.horizon = oc.horizon;
    bc.z_weight = oc.z_weight;
    bc.z_ceiling = oc.z_ceiling;
    bc.u_lower = oc.u_lower;
    bc.u_upper = oc.u_upper;
  } else {
    throw ConfigError("config: baseline.fixture must be 'trained' or 'fold'");
  }
  if (!bj["horizon"].is_null()) bc.horizon = bj["horizon"].get<int>();
  write_text_file((ctx.out / "nn_model.json").string(), dense_model_to_json(nn, meta_of(ctx, "nn-model")));
  const json& sj = ctx.cfg.doc["sweep"];
  const int channel = sj["channel"].get<int>();
  if (channel < 0 || channel >= nn.dims.n_y) throw ConfigError("config: sweep.channel out of range");
  const SweepTable t = baseline_sweep(nn, bc, d, r, y0, Vector::Unit(nn.dims.n_y, channel),
                                      sweep_grid(sj), bj["inits"].get<int>(), ctx.cfg.seed);
  write_sweep_csv((ctx.out / "baseline_sweep.csv").string(), t, stamp(ctx));
  double worst = 0.0;
  int split = 0;
  for (double v : t.disagreement) {
    if (std::isnan(v)) continue;
    worst = std::max(worst, v);
    if (v > 0.05) ++split;
  }
  rep.metric("failures", t.failures);
  rep.metric("max_disagreement", worst);
  rep.metric("points_with_disagreement_over_0.05", split);
  if (fixture == "fold") rep.check("non_uniqueness_exhibited", worst, 0.05, worst > 0.05);
}

using Command = void (*)(const Context&, Report&);

}  // namespace

int run(int argc, char** argv) {
  CLI::App app{"Structured Hammerstein-Wiener identification and convex MPC"};
  app.require_subcommand(1);
  app.fallthrough();
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out_dir = ".";
  bool check = false;
  std::vector<std::string> sets;
  app.add_option("--config", config_path, "JSON configuration file");
  app.add_option("--seed", seed, "Seed override");
  app.add_option("--out", out_dir, "Output directory");
  app.add_flag("--check", check, "Evaluate acceptance thresholds (exit 4 on failure)");
  app.add_option("--set", sets, "Override a config key: key.path=value")->take_all();

  const std::map<std::string, std::pair<Command, std::string>> commands = {
      {"generate", {cmd_generate, "Simulate the synthetic plant and write a dataset CSV"}},
      {"train", {cmd_train, "Identify a structured model from the dataset"}},
      {"solve", {cmd_solve, "Solve one convex OCP at the configured target"}},
      {"sweep", {cmd_sweep, "Control-law sweep over the initial output"}},
      {"mpc", {cmd_mpc, "Closed-loop MPC on the synthetic plant"}},
      {"cbf", {cmd_cbf, "LQR with barrier-function filter on the identified model"}},
      {"baseline", {cmd_baseline, "Dense one-step network and non-convex SQP sweep"}},
  };
  for (const auto& [name, entry] : commands) app.add_subcommand(name, entry.second);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfigError;
  }
  const std::string name = app.get_subcommands().front()->get_name();
  const auto t0 = std::chrono::steady_clock::now();
  try {
    Context ctx;
    ctx.command = name;
    ctx.check = check;
    ctx.out = out_dir;
    ctx.cfg = load_config(config_path, sets, seed);
    fs::create_directories(ctx.out);
    Report rep;
    commands.at(name).first(ctx, rep);
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    rep.write(ctx, secs);
    if (check && !rep.failed().empty()) {
      std::cerr << name << ": check failed:";
      for (const auto& f : rep.failed()) std::cerr << ' ' << f;
      std::cerr << "\n";
      return kCheckFailed;
    }
    std::cout << name << ": done in " << secs << " s (config " << ctx.cfg.hash << ")\n";
    return kOk;
  } catch (const ConfigError& e) {
    std::cerr << name << ": " << e.what() << "\n";
    return kConfigError;
  } catch (const Error& e) {
    std::cerr << name << ": numerical failure: " << e.what() << "\n";
    return kNumericalError;
  } catch (const fs::filesystem_error& e) {
    std::cerr << name << ": " << e.what() << "\n";
    return kConfigError;
  } catch (const json::exception& e) {
    std::cerr << name << ": config: " << e.what() << "\n";
    return kConfigError;
  } catch (const std::exception& e) {
    std::cerr << name << ": " << e.what() << "\n";
    return kNumericalError;
  }
}

}  // namespace shwmpc::cli
