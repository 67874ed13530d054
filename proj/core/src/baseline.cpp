#include "shwmpc/baseline.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "shwmpc/error.hpp"

namespace shwmpc {
namespace {

using nlohmann::json;

Vector or_default(const Vector& v, int n, double value, const char* what) {
  if (v.size() == 0) return Vector::Constant(n, value);
  if (v.size() != n) throw ConfigError(std::string("baseline config: ") + what + " has the wrong length");
  return v;
}

bool at_bound(double x, double b) { return std::abs(x - b) <= 1e-12 * (1.0 + std::abs(b)); }

void snap_to_box(Vector& v, const Vector& lo, const Vector& hi) {
  v = v.cwiseMax(lo).cwiseMin(hi);
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    if (at_bound(v(i), lo(i))) v(i) = lo(i);
    if (at_bound(v(i), hi(i))) v(i) = hi(i);
  }
}

std::string encode_matrix(const Matrix& m) {
  std::vector<double> flat(static_cast<std::size_t>(m.size()));
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) flat[i * m.cols() + j] = m(i, j);
  return encode_doubles(flat);
}

Matrix decode_matrix(const json& j, int rows, int cols) {
  const auto flat = decode_doubles(j.get<std::string>());
  if (flat.size() != static_cast<std::size_t>(rows) * cols) {
    throw DimensionError("nn model: tensor size disagrees with the header");
  }
  Matrix m(rows, cols);
  for (int i = 0; i < rows; ++i)
    for (int k = 0; k < cols; ++k) m(i, k) = flat[i * cols + k];
  return m;
}

}  // namespace

void DenseNnModel::validate() const {
  if (width < 1) throw DimensionError("nn model: width must be >= 1");
  if (w1.rows() != width || w1.cols() != in_dim() || b1.size() != width ||
      w2.rows() != out_dim() || w2.cols() != width || b2.size() != out_dim()) {
    throw DimensionError("nn model: parameter shapes disagree with dims");
  }
  if (!(delta > 0.0)) throw Error("nn model: sampling period must be positive");
}

DenseNnModel make_dense_model(const ShwDims& dims, int width, double delta,
                              std::mt19937_64& rng) {
  DenseNnModel m;
  m.dims = dims;
  m.width = width;
  m.delta = delta;
  std::normal_distribution<double> n01(0.0, 1.0);
  m.w1 = Matrix(width, m.in_dim());
  for (double& w : m.w1.reshaped()) w = n01(rng) / std::sqrt(m.in_dim());
  m.b1 = Vector::Zero(width);
  m.w2 = Matrix(m.out_dim(), width);
  for (double& w : m.w2.reshaped()) w = n01(rng) / std::sqrt(width);
  m.b2 = Vector::Zero(m.out_dim());
  m.validate();
  return m;
}

int width_for_param_count(const ShwDims& dims, std::size_t target) {
  const int per = dims.n_y + dims.n_u + dims.n_d + 1 + dims.n_y + dims.n_z;
  const double w = (static_cast<double>(target) - (dims.n_y + dims.n_z)) / per;
  return std::max(1, static_cast<int>(std::lround(w)));
}

DenseEval dense_eval(const DenseNnModel& m, const Vector& y, const Vector& u, const Vector& d,
                     bool with_jac) {
  if (y.size() != m.dims.n_y || u.size() != m.dims.n_u || d.size() != m.dims.n_d) {
    throw DimensionError("dense_eval: input dimensions");
  }
  Vector in(m.in_dim());
  in << y, u, d;
  const Vector h = (m.w1 * in + m.b1).array().tanh().matrix();
  const Vector out = m.w2 * h + m.b2;
  DenseEval e;
  e.y_next = out.head(m.dims.n_y);
  e.z = out.tail(m.dims.n_z);
  if (with_jac) {
    const Vector dh = (1.0 - h.array().square()).matrix();
    e.jac = m.w2 * dh.asDiagonal() * m.w1;
  }
  return e;
}

OneStepData one_step_pairs(const TimeSeriesDataset& ds, double delta) {
  ds.validate();
  if (ds.size() < 2) throw Error("one_step_pairs: need at least two records");
  const double dt = ds.records[1].t - ds.records[0].t;
  const long stride = std::lround(delta / dt);
  if (stride < 1 || std::abs(stride * dt - delta) > 1e-9 * delta) {
    throw ConfigError("one_step_pairs: delta must be a multiple of the sample period");
  }
  const ShwDims& dm = ds.dims;
  const long count = static_cast<long>(ds.size()) - stride;
  if (count < 1) throw Error("one_step_pairs: dataset shorter than one step");
  OneStepData data;
  data.inputs.resize(dm.n_y + dm.n_u + dm.n_d, count);
  data.targets.resize(dm.n_y + dm.n_z, count);
  for (long k = 0; k < count; ++k) {
    const Record& r = ds.records[k];
    data.inputs.col(k) << r.y, r.u, r.d;
    data.targets.col(k) << ds.records[k + stride].y, r.z;
  }
  return data;
}

namespace {

Matrix forward_batch(const DenseNnModel& m, const Matrix& x, Matrix* hidden = nullptr) {
  Matrix h = ((m.w1 * x).colwise() + m.b1).array().tanh().matrix();
  Matrix out = (m.w2 * h).colwise() + m.b2;
  if (hidden != nullptr) *hidden = std::move(h);
  return out;
}

}  // namespace

double dense_loss(const DenseNnModel& m, const OneStepData& data) {
  if (data.inputs.cols() == 0) return 0.0;
  const Matrix err = forward_batch(m, data.inputs) - data.targets;
  return err.squaredNorm() / static_cast<double>(data.inputs.cols());
}

std::vector<double> dense_r2(const DenseNnModel& m, const OneStepData& data) {
  const Matrix pred = forward_batch(m, data.inputs);
  std::vector<double> r2;
  for (Eigen::Index i = 0; i < data.targets.rows(); ++i) {
    const auto t = data.targets.row(i).array();
    const double sst = (t - t.mean()).square().sum();
    const double sse = (pred.row(i).array() - t).square().sum();
    r2.push_back(sst > 0.0 ? 1.0 - sse / sst : (sse == 0.0 ? 1.0 : -std::numeric_limits<double>::infinity()));
  }
  return r2;
}

BaselineFitResult baseline_fit(const TimeSeriesDataset& ds, double delta,
                               const BaselineFitConfig& cfg) {
  if (cfg.epochs < 0 || cfg.batch_size < 1 || !(cfg.learning_rate > 0.0)) {
    throw ConfigError("baseline_fit: epochs, batch_size and learning_rate must be positive");
  }
  if (!(cfg.validation_fraction >= 0.0 && cfg.validation_fraction < 1.0)) {
    throw ConfigError("baseline_fit: validation_fraction must lie in [0, 1)");
  }
  const OneStepData all = one_step_pairs(ds, delta);
  const long n = all.inputs.cols();
  const long n_val = static_cast<long>(std::floor(cfg.validation_fraction * n));
  const long n_train = n - n_val;
  if (n_train < 1) throw Error("baseline_fit: no training pairs");
  OneStepData train{all.inputs.leftCols(n_train), all.targets.leftCols(n_train)};
  OneStepData val{all.inputs.rightCols(n_val), all.targets.rightCols(n_val)};

  int width = cfg.width;
  if (width <= 0) width = cfg.match_params > 0 ? width_for_param_count(ds.dims, cfg.match_params) : 16;
  std::mt19937_64 rng(cfg.seed);
  BaselineFitResult res;
  res.model = make_dense_model(ds.dims, width, delta, rng);
  DenseNnModel& m = res.model;
  m.b2 = train.targets.rowwise().mean();
  res.structured_params = cfg.match_params;

  // Adam state.
  Matrix mw1 = Matrix::Zero(m.w1.rows(), m.w1.cols()), vw1 = mw1;
  Matrix mw2 = Matrix::Zero(m.w2.rows(), m.w2.cols()), vw2 = mw2;
  Vector mb1 = Vector::Zero(m.b1.size()), vb1 = mb1;
  Vector mb2 = Vector::Zero(m.b2.size()), vb2 = mb2;
  const double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  long step = 0;
  std::vector<long> order(n_train);
  std::iota(order.begin(), order.end(), 0);
  const long batches = (n_train + cfg.batch_size - 1) / cfg.batch_size;
  const long total_steps = std::max<long>(1, batches * cfg.epochs);

  auto adam = [&](auto& param, auto& mom, auto& vel, const auto& grad, double lr, double c1,
                  double c2) {
    mom = beta1 * mom + (1.0 - beta1) * grad;
    vel = beta2 * vel + (1.0 - beta2) * grad.cwiseProduct(grad);
    param.array() -= lr * (mom.array() / c1) / ((vel.array() / c2).sqrt() + eps);
  };

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (long b = 0; b < batches; ++b) {
      const long lo = b * cfg.batch_size;
      const long hi = std::min(n_train, lo + cfg.batch_size);
      const long bs = hi - lo;
      Matrix x(train.inputs.rows(), bs), t(train.targets.rows(), bs);
      for (long k = 0; k < bs; ++k) {
        x.col(k) = train.inputs.col(order[lo + k]);
        t.col(k) = train.targets.col(order[lo + k]);
      }
      Matrix h;
      const Matrix out = forward_batch(m, x, &h);
      const Matrix g = 2.0 * (out - t) / static_cast<double>(bs);
      const Matrix gw2 = g * h.transpose();
      const Vector gb2 = g.rowwise().sum();
      const Matrix dh = (m.w2.transpose() * g).cwiseProduct((1.0 - h.array().square()).matrix());
      const Matrix gw1 = dh * x.transpose();
      const Vector gb1 = dh.rowwise().sum();
      ++step;
      const double frac = static_cast<double>(step - 1) / static_cast<double>(total_steps);
      const double lr = cfg.learning_rate *
                        (cfg.final_lr_fraction +
                         (1.0 - cfg.final_lr_fraction) * 0.5 * (1.0 + std::cos(M_PI * frac)));
      const double c1 = 1.0 - std::pow(beta1, static_cast<double>(step));
      const double c2 = 1.0 - std::pow(beta2, static_cast<double>(step));
      adam(m.w1, mw1, vw1, gw1, lr, c1, c2);
      adam(m.b1, mb1, vb1, gb1, lr, c1, c2);
      adam(m.w2, mw2, vw2, gw2, lr, c1, c2);
      adam(m.b2, mb2, vb2, gb2, lr, c1, c2);
    }
    const double l = dense_loss(m, train);
    if (!std::isfinite(l)) {
      std::ostringstream os;
      os << "baseline_fit: loss diverged at epoch " << epoch;
      throw TrainingError(os.str(), epoch);
    }
    res.epochs_run = epoch + 1;
  }
  res.train_loss = dense_loss(m, train);
  if (!std::isfinite(res.train_loss)) throw TrainingError("baseline_fit: non-finite loss", 0);
  const OneStepData& score = n_val > 0 ? val : train;
  res.validation_loss = dense_loss(m, score);
  res.validation_r2 = dense_r2(m, score);
  return res;
}

BaselineProblem make_baseline_problem(const DenseNnModel& m, const Vector& y0,
                                      const Vector& d_bar, const Vector& r_bar,
                                      const BaselineMpcConfig& cfg) {
  m.validate();
  if (cfg.horizon < 1) throw ConfigError("baseline MPC horizon must be >= 1");
  if (y0.size() != m.dims.n_y || r_bar.size() != m.dims.n_y || d_bar.size() != m.dims.n_d) {
    throw DimensionError("make_baseline_problem: y0 / rbar / dbar dimensions");
  }
  BaselineProblem p;
  p.model = &m;
  p.n = cfg.horizon;
  p.y0 = y0;
  p.d_bar = d_bar;
  p.r_bar = r_bar;
  const Vector lo = or_default(cfg.u_lower, m.dims.n_u, -1.0, "u_lower");
  const Vector hi = or_default(cfg.u_upper, m.dims.n_u, 1.0, "u_upper");
  if (!((hi - lo).minCoeff() > 0.0)) throw ConfigError("baseline: u_lower must be below u_upper");
  p.u_lower = lo.replicate(p.n, 1);
  p.u_upper = hi.replicate(p.n, 1);
  p.z_weight = or_default(cfg.z_weight, m.dims.n_z, 1.0, "z_weight");
  p.z_ceiling = or_default(cfg.z_ceiling, m.dims.n_z, 0.8, "z_ceiling");
  if (p.z_weight.minCoeff() < 0.0) throw ConfigError("baseline: z weights must be >= 0");
  p.max_iterations = cfg.max_iterations;
  p.tolerance = cfg.tolerance;
  return p;
}

double baseline_objective(const BaselineProblem& p, const Vector& u, Vector* grad,
                          Matrix* gn_hess) {
  const DenseNnModel& m = *p.model;
  const int ny = m.dims.n_y, nu = m.dims.n_u, nz = m.dims.n_z;
  const int nt = p.n_u_total();
  if (u.size() != nt) throw DimensionError("baseline_objective: U has the wrong length");
  const bool deriv = grad != nullptr || gn_hess != nullptr;
  if (grad != nullptr) grad->setZero(nt);
  if (gn_hess != nullptr) gn_hess->setZero(nt, nt);
  Vector y = p.y0;
  Matrix s = Matrix::Zero(ny, nt);  // dy_k / dU
  double f = 0.0;
  for (int k = 0; k < p.n; ++k) {
    const DenseEval ev = dense_eval(m, y, u.segment(k * nu, nu), p.d_bar, deriv);
    Matrix s_next;
    if (deriv) {
      const Matrix jy = ev.jac.topLeftCorner(ny, ny);
      s_next = jy * s;
      s_next.middleCols(k * nu, nu) += ev.jac.block(0, ny, ny, nu);
      // z_k depends on y_k and u_k.
      for (int j = 0; j < nz; ++j) {
        const double sl = ev.z(j) - p.z_ceiling(j);
        const double w = p.z_weight(j);
        if (w == 0.0 || sl <= 0.0) continue;
        Vector gz = s.transpose() * ev.jac.row(ny + j).head(ny).transpose();
        gz.segment(k * nu, nu) += ev.jac.row(ny + j).segment(ny, nu).transpose();
        if (grad != nullptr) *grad += 3.0 * w * sl * sl * gz;
        if (gn_hess != nullptr) *gn_hess += 6.0 * w * sl * gz * gz.transpose();
      }
    }
    for (int j = 0; j < nz; ++j) {
      const double sl = ev.z(j) - p.z_ceiling(j);
      if (p.z_weight(j) > 0.0 && sl > 0.0) f += p.z_weight(j) * sl * sl * sl;
    }
    y = ev.y_next;
    const Vector e = y - p.r_bar;
    f += e.squaredNorm();
    if (deriv) {
      s = std::move(s_next);
      if (grad != nullptr) *grad += 2.0 * s.transpose() * e;
      if (gn_hess != nullptr) *gn_hess += 2.0 * s.transpose() * s;
    }
  }
  return f;
}

BaselineSolution baseline_mpc_solve(const BaselineProblem& p, const Vector& u_init) {
  if (p.model == nullptr) throw Error("baseline_mpc_solve: problem has no model");
  const int nt = p.n_u_total();
  if (u_init.size() != nt) throw DimensionError("baseline_mpc_solve: U_init has the wrong length");
  Vector u = u_init;
  snap_to_box(u, p.u_lower, p.u_upper);
  double damping = 1e-6;
  double res = std::numeric_limits<double>::infinity();
  Vector g;
  Matrix h;
  for (int it = 0; it <= p.max_iterations; ++it) {
    const double f = baseline_objective(p, u, &g, &h);
    Vector lambda = Vector::Zero(2 * nt);
    for (int i = 0; i < nt; ++i) {
      if (at_bound(u(i), p.u_lower(i))) lambda(i) = std::max(g(i), 0.0);
      if (at_bound(u(i), p.u_upper(i))) lambda(nt + i) = std::max(-g(i), 0.0);
    }
    res = (g - lambda.head(nt) + lambda.tail(nt)).cwiseAbs().maxCoeff();
    if (res <= p.tolerance) {
      return BaselineSolution{u, lambda, f, res, it};
    }
    if (it == p.max_iterations) break;
    bool accepted = false;
    for (int attempt = 0; attempt < 12 && !accepted; ++attempt) {
      const double scale = std::max(1.0, h.diagonal().cwiseAbs().maxCoeff());
      Matrix hd = h;
      hd.diagonal().array() += damping * scale;
      const Vector d = solve_qp(hd, g, p.u_lower - u, p.u_upper - u).x;
      const double slope = g.dot(d);
      double alpha = 1.0;
      for (int ls = 0; ls < 30; ++ls, alpha *= 0.5) {
        Vector trial = u + alpha * d;
        snap_to_box(trial, p.u_lower, p.u_upper);
        if (baseline_objective(p, trial) <= f + 1e-4 * alpha * slope + 1e-15 * std::abs(f)) {
          u = trial;
          accepted = true;
          break;
        }
      }
      if (accepted) {
        damping = std::max(1e-12, damping * (alpha == 1.0 ? 0.3 : 1.0));
      } else {
        damping *= 100.0;
      }
    }
    if (!accepted) break;
  }
  std::ostringstream os;
  os << "baseline SQP: no convergence within " << p.max_iterations
     << " iterations (first-order residual " << res << ")";
  throw SolverError(os.str(), res);
}

std::vector<Vector> baseline_inits(const BaselineProblem& p, int count, std::uint64_t seed) {
  std::vector<Vector> out;
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (int i = 0; i < count; ++i) {
    if (i == 0) {
      out.push_back(0.5 * (p.u_lower + p.u_upper));
    } else if (i == 1) {
      out.push_back(p.u_lower);
    } else if (i == 2) {
      out.push_back(p.u_upper);
    } else {
      Vector v(p.n_u_total());
      for (int k = 0; k < v.size(); ++k) {
        v(k) = p.u_lower(k) + unit(rng) * (p.u_upper(k) - p.u_lower(k));
      }
      out.push_back(v);
    }
  }
  return out;
}

SweepTable baseline_sweep(const DenseNnModel& m, const BaselineMpcConfig& cfg,
                          const Vector& d_bar, const Vector& r_bar, const Vector& y_base,
                          const Vector& direction, const std::vector<double>& grid,
                          int num_inits, std::uint64_t seed) {
  if (y_base.size() != m.dims.n_y || direction.size() != m.dims.n_y) {
    throw DimensionError("baseline_sweep: y_base / direction dimensions");
  }
  return run_sweep(grid, num_inits, [&](double s, int init) {
    const BaselineProblem p = make_baseline_problem(m, y_base + s * direction, d_bar, r_bar, cfg);
    const auto inits = baseline_inits(p, num_inits, seed);
    const BaselineSolution sol = baseline_mpc_solve(p, inits[init]);
    return FirstStep{sol.first_u(m.dims.n_u), sol.objective, sol.residual_inf, sol.iterations};
  });
}

DenseNnModel fold_model() {
  DenseNnModel m;
  m.dims = {1, 1, 1, 1};
  m.width = 4;
  m.delta = 0.1;
  // Inputs [y, u, d].
  m.w1 = Matrix{{0.0, 2.0, 0.0}, {0.0, 2.0, 0.0}, {0.0, 0.1, 0.0}, {0.1, 0.0, 0.0}};
  m.b1 = Vector(Eigen::Vector4d(1.0, -1.0, 0.0, 0.0));
  // y+ = bump(u) - slope u + 0.5 y; z = 0.
  m.w2 = Matrix{{1.0, -1.0, -1.0, 5.0}, {0.0, 0.0, 0.0, 0.0}};
  m.b2 = Vector::Zero(2);
  m.validate();
  return m;
}

std::string dense_model_to_json(const DenseNnModel& m, const ArtifactMeta& meta) {
  m.validate();
  json j;
  j["format"] = "shwmpc-nn-model";
  j["version"] = 1;
  j["meta"] = {{"config_hash", meta.config_hash}, {"seed", meta.seed}, {"kind", "nn-model"}};
  j["dims"] = {{"n_u", m.dims.n_u}, {"n_y", m.dims.n_y}, {"n_z", m.dims.n_z}, {"n_d", m.dims.n_d}};
  j["width"] = m.width;
  j["delta"] = m.delta;
  j["w1"] = encode_matrix(m.w1);
  j["b1"] = encode_matrix(m.b1);
  j["w2"] = encode_matrix(m.w2);
  j["b2"] = encode_matrix(m.b2);
  return j.dump(2) + "\n";
}

DenseNnModel dense_model_from_json(const std::string& text, ArtifactMeta* meta) {
  try {
    const json j = json::parse(text);
    if (j.at("format").get<std::string>() != "shwmpc-nn-model") {
      throw Error("nn model: unexpected format tag");
    }
    if (j.at("version").get<int>() != 1) throw Error("nn model: unsupported version");
    DenseNnModel m;
    const json& d = j.at("dims");
    m.dims = {d.at("n_u").get<int>(), d.at("n_y").get<int>(), d.at("n_z").get<int>(),
              d.at("n_d").get<int>()};
    m.width = j.at("width").get<int>();
    m.delta = j.at("delta").get<double>();
    m.w1 = decode_matrix(j.at("w1"), m.width, m.in_dim());
    m.b1 = decode_matrix(j.at("b1"), m.width, 1);
    m.w2 = decode_matrix(j.at("w2"), m.out_dim(), m.width);
    m.b2 = decode_matrix(j.at("b2"), m.out_dim(), 1);
    m.validate();
    if (meta != nullptr) {
      const json& mt = j.at("meta");
      meta->config_hash = mt.at("config_hash").get<std::string>();
      meta->seed = mt.at("seed").get<std::uint64_t>();
      meta->kind = mt.at("kind").get<std::string>();
    }
    return m;
  } catch (const json::exception& e) {
    throw Error(std::string("nn model: malformed document: ") + e.what());
  }
}

}  // namespace shwmpc
