#include "shwmpc/ident.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <deque>
#include <iostream>
#include <limits>
#include <numbers>
#include <numeric>
#include <random>
#include <sstream>

#include "shwmpc/autodiff.hpp"
#include "shwmpc/error.hpp"
#include "shwmpc/parallel.hpp"

namespace shwmpc {
namespace {

// Records per reduction chunk. Fixed so results do not depend on threads.
constexpr std::size_t kChunk = 16;

std::vector<std::size_t> all_indices(const TimeSeriesDataset& ds,
                                     std::span<const std::size_t> idx) {
  if (!idx.empty()) return {idx.begin(), idx.end()};
  std::vector<std::size_t> out(ds.size());
  std::iota(out.begin(), out.end(), 0);
  return out;
}

std::span<const double> span_of(const Vector& v) {
  return {v.data(), static_cast<std::size_t>(v.size())};
}

void require_derivatives(const TimeSeriesDataset& ds) {
  if (!ds.has_derivatives()) {
    throw Error("identification needs ydot/ddot; difference the dataset first");
  }
}

template <class T>
ShwThetaView<T> view_of(std::span<const T> v, const ThetaBundle& layout) {
  auto part = [&](Component c) {
    const auto k = static_cast<int>(c);
    return v.subspan(layout.bounds[k], layout.bounds[k + 1] - layout.bounds[k]);
  };
  return {part(Component::kPsi), part(Component::kPhi), part(Component::kXi),
          part(Component::kA),   part(Component::kB),   part(Component::kC)};
}

template <class T>
T quad_form(const std::vector<T>& e, const Matrix& k) {
  T acc(0.0);
  const int n = static_cast<int>(e.size());
  for (int i = 0; i < n; ++i) {
    T row(0.0);
    for (int j = 0; j < n; ++j) {
      if (k(i, j) != 0.0) row += k(i, j) * e[j];
    }
    acc += e[i] * row;
  }
  return acc;
}

[[noreturn]] void rethrow_with_record(const ConditioningError& e, std::size_t rec) {
  std::ostringstream os;
  os << "record " << rec << ": " << e.what();
  throw ConditioningError(os.str());
}

double record_loss(const ShwModel& m, const ShwThetaView<double>& th, const Record& r,
                   const Matrix& k) {
  const auto e = residual_generic<double>(m, th, span_of(r.u), span_of(r.d), span_of(r.y),
                                          span_of(r.z), span_of(r.ydot), span_of(r.ddot));
  return quad_form(e, k);
}

std::vector<ad::Var> constants(const Vector& v) {
  return std::vector<ad::Var>(v.data(), v.data() + v.size());
}

}  // namespace

const char* component_name(Component c) {
  switch (c) {
    case Component::kPsi: return "psi";
    case Component::kPhi: return "phi";
    case Component::kXi: return "xi";
    case Component::kA: return "A";
    case Component::kB: return "B";
    case Component::kC: return "c";
  }
  return "?";
}

ThetaBundle ThetaBundle::from_model(const ShwModel& m) {
  ThetaBundle b;
  const std::vector<double>* parts[kNumComponents] = {&m.psi.theta, &m.phi.theta, &m.xi.theta,
                                                      &m.dyn.a,     &m.dyn.b,     &m.dyn.c};
  b.bounds[0] = 0;
  for (int k = 0; k < kNumComponents; ++k) {
    b.values.insert(b.values.end(), parts[k]->begin(), parts[k]->end());
    b.bounds[k + 1] = b.values.size();
  }
  return b;
}

ThetaBundle ThetaBundle::zeros_like(const ShwModel& m) {
  ThetaBundle b = from_model(m);
  std::fill(b.values.begin(), b.values.end(), 0.0);
  return b;
}

void ThetaBundle::to_model(ShwModel& m) const {
  std::vector<double>* parts[kNumComponents] = {&m.psi.theta, &m.phi.theta, &m.xi.theta,
                                                &m.dyn.a,     &m.dyn.b,     &m.dyn.c};
  for (int k = 0; k < kNumComponents; ++k) {
    if (parts[k]->size() != bounds[k + 1] - bounds[k]) {
      throw DimensionError("theta bundle does not match the model layout");
    }
    std::copy(values.begin() + bounds[k], values.begin() + bounds[k + 1], parts[k]->begin());
  }
}

Matrix IdentConfig::weight(const ShwDims& dims) const {
  const int n = dims.n_y + dims.n_z;
  if (k_e.size() == 0) return Matrix::Identity(n, n);
  if (k_e.rows() != n || k_e.cols() != n) {
    throw ConfigError("K_e must be (n_y + n_z) x (n_y + n_z)");
  }
  if ((k_e - k_e.transpose()).cwiseAbs().maxCoeff() > 1e-12 * (1.0 + k_e.cwiseAbs().maxCoeff())) {
    throw ConfigError("K_e must be symmetric");
  }
  Eigen::LLT<Matrix> llt(k_e);
  if (llt.info() != Eigen::Success) throw ConfigError("K_e must be positive definite");
  return k_e;
}

void IdentConfig::validate(const ShwDims& dims) const {
  weight(dims);
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (epochs < 0) throw ConfigError("epochs must be >= 0");
  if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be positive");
  if (!(final_lr_fraction >= 0.0 && final_lr_fraction <= 1.0)) {
    throw ConfigError("final_lr_fraction must lie in [0, 1]");
  }
  if (!(validation_fraction >= 0.0 && validation_fraction < 1.0)) {
    throw ConfigError("validation_fraction must lie in [0, 1)");
  }
  if (lbfgs_iterations < 0 || lbfgs_memory < 1) throw ConfigError("bad L-BFGS settings");
}

double loss(const ShwModel& m, const TimeSeriesDataset& ds, const Matrix& k_e,
            std::span<const std::size_t> idx) {
  require_derivatives(ds);
  const auto rec = all_indices(ds, idx);
  if (rec.empty()) throw Error("loss: empty batch");
  const ThetaBundle layout = ThetaBundle::from_model(m);
  const auto th = view_of<double>(layout.values, layout);
  const std::size_t chunks = (rec.size() + kChunk - 1) / kChunk;
  std::vector<double> partial(chunks, 0.0);
  parallel_for(chunks, [&](std::size_t c) {
    double acc = 0.0;
    for (std::size_t i = c * kChunk; i < std::min(rec.size(), (c + 1) * kChunk); ++i) {
      try {
        acc += record_loss(m, th, ds.records[rec[i]], k_e);
      } catch (const ConditioningError& e) {
        rethrow_with_record(e, rec[i]);
      }
    }
    partial[c] = acc;
  });
  double total = 0.0;
  for (double p : partial) total += p;
  return total / static_cast<double>(rec.size());
}

LossGrad grad_loss(const ShwModel& m, const TimeSeriesDataset& ds, const Matrix& k_e,
                   std::span<const std::size_t> idx) {
  require_derivatives(ds);
  const auto rec = all_indices(ds, idx);
  if (rec.empty()) throw Error("grad_loss: empty batch");
  const ThetaBundle layout = ThetaBundle::from_model(m);
  const std::size_t p = layout.size();
  const std::size_t chunks = (rec.size() + kChunk - 1) / kChunk;
  std::vector<std::vector<double>> grads(chunks);
  std::vector<double> losses(chunks, 0.0);

  parallel_for(chunks, [&](std::size_t c) {
    ad::TapeScope scope;
    const std::vector<ad::Var> leaves = scope.leaves(layout.values);
    const auto th = view_of<ad::Var>(leaves, layout);
    const std::size_t base = scope.tape().size();
    std::vector<double> g(p, 0.0);
    std::vector<double> adj;
    double acc = 0.0;
    for (std::size_t i = c * kChunk; i < std::min(rec.size(), (c + 1) * kChunk); ++i) {
      const Record& r = ds.records[rec[i]];
      scope.tape().truncate(base);
      const auto u = constants(r.u), d = constants(r.d), y = constants(r.y), z = constants(r.z),
                 yd = constants(r.ydot), dd = constants(r.ddot);
      std::vector<ad::Var> e;
      try {
        e = residual_generic<ad::Var>(m, th, u, d, y, z, yd, dd);
      } catch (const ConditioningError& err) {
        rethrow_with_record(err, rec[i]);
      }
      const ad::Var l = quad_form(e, k_e);
      acc += l.value();
      if (l.is_constant()) continue;
      scope.tape().backward(l.id(), adj);
      for (std::size_t k = 0; k < p; ++k) g[k] += adj[k];
    }
    grads[c] = std::move(g);
    losses[c] = acc;
  });

  LossGrad out;
  out.grad = ThetaBundle::zeros_like(m);
  const double scale = 1.0 / static_cast<double>(rec.size());
  for (std::size_t c = 0; c < chunks; ++c) {
    out.loss += losses[c];
    for (std::size_t k = 0; k < p; ++k) out.grad.values[k] += grads[c][k];
  }
  out.loss *= scale;
  for (double& v : out.grad.values) v *= scale;
  return out;
}

JacobianStats jacobian_stats(const ShwModel& m, const TimeSeriesDataset& ds) {
  JacobianStats st;
  st.min_abs_det = std::numeric_limits<double>::infinity();
  st.max_abs_det = 0.0;
  st.min_omega_det = std::numeric_limits<double>::infinity();
  for (const Record& r : ds.records) {
    const double det = std::abs(bnn_jacobian(m.phi, r.y, r.d).determinant());
    st.min_abs_det = std::min(st.min_abs_det, det);
    st.max_abs_det = std::max(st.max_abs_det, det);
    st.min_omega_det = std::min({st.min_omega_det, bnn_min_omega_det(m.phi, r.d),
                                 bnn_min_omega_det(m.psi, r.d)});
  }
  return st;
}

namespace {

struct Trainer {
  const TimeSeriesDataset& train;
  const TimeSeriesDataset& val;
  const IdentConfig& cfg;
  Matrix k;
  ShwModel model;
  ThetaBundle theta;
  std::vector<std::size_t> order;
  std::vector<std::size_t> guard_sample;

  void mask(ThetaBundle& g) const {
    for (int c = 0; c < kNumComponents; ++c) {
      if (!cfg.train[c]) {
        auto s = g.slice(static_cast<Component>(c));
        std::fill(s.begin(), s.end(), 0.0);
      }
    }
  }

  void check_guard(int epoch) const {
    for (std::size_t i : guard_sample) {
      const Vector& d = train.records[i].d;
      const double det = std::min(bnn_min_omega_det(model.phi, d), bnn_min_omega_det(model.psi, d));
      if (!(det > kOmegaDetFloor)) {
        std::ostringstream os;
        os << "determinant guard tripped (|det Omega| = " << det << ") at record " << i;
        throw TrainingError(os.str(), epoch);
      }
    }
  }

  double eval_loss(const TimeSeriesDataset& ds, int epoch) const {
    double l;
    try {
      l = loss(model, ds, k);
    } catch (const ConditioningError& e) {
      throw TrainingError(std::string("conditioning failure: ") + e.what(), epoch);
    }
    if (!std::isfinite(l)) throw TrainingError("loss diverged (non-finite)", epoch);
    return l;
  }

  void adam(TrainingReport& rep) {
    const std::size_t p = theta.size();
    std::vector<double> mom(p, 0.0), var(p, 0.0);
    std::mt19937_64 rng(cfg.seed ^ 0x9e3779b97f4a7c15ULL);
    std::size_t step = 0;
    const double b1 = 0.9, b2 = 0.999, eps = 1e-8;
    const std::size_t bs = std::min<std::size_t>(cfg.batch_size, train.size());
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
      const double frac = cfg.epochs > 1 ? static_cast<double>(epoch) / (cfg.epochs - 1) : 1.0;
      const double lr =
          cfg.learning_rate * (cfg.final_lr_fraction +
                               (1.0 - cfg.final_lr_fraction) * 0.5 *
                                   (1.0 + std::cos(std::numbers::pi * frac)));
      std::shuffle(order.begin(), order.end(), rng);
      for (std::size_t start = 0; start < order.size(); start += bs) {
        const std::size_t end = std::min(order.size(), start + bs);
        LossGrad lg;
        try {
          lg = grad_loss(model, train, k, std::span(order).subspan(start, end - start));
        } catch (const ConditioningError& e) {
          throw TrainingError(std::string("conditioning failure: ") + e.what(), epoch);
        }
        if (!std::isfinite(lg.loss)) throw TrainingError("loss diverged (non-finite)", epoch);
        mask(lg.grad);
        ++step;
        const double c1 = 1.0 - std::pow(b1, static_cast<double>(step));
        const double c2 = 1.0 - std::pow(b2, static_cast<double>(step));
        for (std::size_t i = 0; i < p; ++i) {
          const double g = lg.grad.values[i];
          mom[i] = b1 * mom[i] + (1 - b1) * g;
          var[i] = b2 * var[i] + (1 - b2) * g * g;
          if (g == 0.0 && mom[i] == 0.0) continue;
          theta.values[i] -= lr * (mom[i] / c1) / (std::sqrt(var[i] / c2) + eps);
        }
        theta.to_model(model);
      }
      check_guard(epoch);
      EpochStats st;
      st.epoch = epoch;
      st.learning_rate = lr;
      st.train_loss = eval_loss(train, epoch);
      st.val_loss = val.empty() ? std::numeric_limits<double>::quiet_NaN() : eval_loss(val, epoch);
      rep.epochs.push_back(st);
      if (cfg.verbose) {
        std::cerr << "epoch " << epoch << " lr " << lr << " train " << st.train_loss << " val "
                  << st.val_loss << "\n";
      }
    }
  }

  // Full-batch loss and gradient at trial parameters; nullopt-like false on
  // numerical failure.
  bool trial(const std::vector<double>& x, double& f, std::vector<double>& g) {
    ThetaBundle t = theta;
    t.values = x;
    ShwModel m = model;
    t.to_model(m);
    try {
      LossGrad lg = grad_loss(m, train, k);
      if (!std::isfinite(lg.loss)) return false;
      mask(lg.grad);
      f = lg.loss;
      g = std::move(lg.grad.values);
      return true;
    } catch (const ConditioningError&) {
      return false;
    }
  }

  void lbfgs(TrainingReport& rep) {
    const int epoch = cfg.epochs;
    std::vector<double> x = theta.values;
    double f;
    std::vector<double> g;
    if (!trial(x, f, g)) throw TrainingError("L-BFGS: initial point not evaluable", epoch);
    std::deque<std::pair<std::vector<double>, std::vector<double>>> mem;
    auto dot = [](const std::vector<double>& a, const std::vector<double>& b) {
      double s = 0.0;
      for (std::size_t i = 0; i < a.size(); ++i) {
        if (std::isfinite(a[i]) && std::isfinite(b[i])) s += a[i] * b[i];
      }
      return s;
    };
    const std::size_t p = x.size();
    int it = 0;
    for (; it < cfg.lbfgs_iterations; ++it) {
      std::vector<double> q = g;
      std::vector<double> alpha(mem.size());
      for (int j = static_cast<int>(mem.size()) - 1; j >= 0; --j) {
        const auto& [s, y] = mem[j];
        alpha[j] = dot(s, q) / dot(y, s);
        for (std::size_t i = 0; i < p; ++i) q[i] -= alpha[j] * y[i];
      }
      double gamma = 1.0;
      if (!mem.empty()) {
        gamma = dot(mem.back().first, mem.back().second) / dot(mem.back().second, mem.back().second);
      } else {
        gamma = 1e-3 / std::max(1e-12, std::sqrt(dot(g, g)));
      }
      for (double& v : q) v *= gamma;
      for (std::size_t j = 0; j < mem.size(); ++j) {
        const auto& [s, y] = mem[j];
        const double beta = dot(y, q) / dot(y, s);
        for (std::size_t i = 0; i < p; ++i) q[i] += s[i] * (alpha[j] - beta);
      }
      for (std::size_t i = 0; i < p; ++i) {
        if (!std::isfinite(x[i])) q[i] = 0.0;
      }
      double slope = -dot(g, q);
      if (!(slope < 0.0)) {
        mem.clear();
        q = g;
        const double s0 = 1e-3 / std::max(1e-12, std::sqrt(dot(g, g)));
        for (double& v : q) v *= s0;
        slope = -dot(g, q);
        if (!(slope < 0.0)) break;
      }
      double step = 1.0;
      std::vector<double> xn(p), gn;
      double fn = 0.0;
      bool accepted = false;
      for (int ls = 0; ls < 30; ++ls, step *= 0.5) {
        for (std::size_t i = 0; i < p; ++i) xn[i] = x[i] - step * q[i];
        if (trial(xn, fn, gn) && fn <= f + 1e-4 * step * slope) {
          accepted = true;
          break;
        }
      }
      if (!accepted) break;
      std::vector<double> s(p), y(p);
      for (std::size_t i = 0; i < p; ++i) {
        s[i] = std::isfinite(x[i]) ? xn[i] - x[i] : 0.0;
        y[i] = gn[i] - g[i];
      }
      if (dot(s, y) > 1e-16) {
        mem.emplace_back(std::move(s), std::move(y));
        if (static_cast<int>(mem.size()) > cfg.lbfgs_memory) mem.pop_front();
      }
      x = std::move(xn);
      g = std::move(gn);
      const double f_old = f;
      f = fn;
      if (cfg.verbose && it % 10 == 0) std::cerr << "lbfgs " << it << " loss " << f << "\n";
      if (std::abs(f_old - f) <= 1e-15 * std::max(1.0, std::abs(f))) {
        ++it;
        break;
      }
    }
    theta.values = x;
    theta.to_model(model);
    check_guard(epoch);
    rep.lbfgs_iterations = it;
  }
};

}  // namespace

FitResult fit(ShwModel initial, const TimeSeriesDataset& ds, const IdentConfig& cfg) {
  const auto t0 = std::chrono::steady_clock::now();
  initial.validate();
  ds.validate();
  if (ds.dims.n_u != initial.dims.n_u || ds.dims.n_y != initial.dims.n_y ||
      ds.dims.n_z != initial.dims.n_z || ds.dims.n_d != initial.dims.n_d) {
    throw DimensionError("fit: dataset dimensions differ from the model");
  }
  require_derivatives(ds);
  cfg.validate(ds.dims);
  auto [train, val] = split_tail(ds, cfg.validation_fraction);
  if (train.empty()) throw Error("fit: empty training set");

  Trainer tr{train, val, cfg, cfg.weight(ds.dims), std::move(initial), {}, {}, {}};
  tr.theta = ThetaBundle::from_model(tr.model);
  tr.order.resize(train.size());
  std::iota(tr.order.begin(), tr.order.end(), 0);
  const std::size_t stride = std::max<std::size_t>(1, train.size() / 200);
  for (std::size_t i = 0; i < train.size(); i += stride) tr.guard_sample.push_back(i);

  TrainingReport rep;
  rep.num_train = train.size();
  rep.num_val = val.size();
  tr.adam(rep);
  if (cfg.lbfgs_iterations > 0) tr.lbfgs(rep);
  rep.final_train_loss = tr.eval_loss(train, cfg.epochs);
  rep.final_val_loss =
      val.empty() ? std::numeric_limits<double>::quiet_NaN() : tr.eval_loss(val, cfg.epochs);
  rep.jacobian = jacobian_stats(tr.model, ds);
  rep.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return {std::move(tr.model), std::move(rep)};
}

FitResult fit(const TimeSeriesDataset& ds, const ShwArchConfig& arch, const IdentConfig& cfg,
              const ShwInit& init) {
  std::mt19937_64 rng(cfg.seed);
  return fit(make_shw_model(arch, rng, init), ds, cfg);
}

OneStepScores one_step_scores(const ShwModel& m, const TimeSeriesDataset& ds) {
  if (ds.size() < 3) throw Error("one_step_scores: need at least three records");
  const int ny = m.dims.n_y;
  const int nz = m.dims.n_z;
  const std::size_t n = ds.size();
  Matrix y_true(n - 1, ny), y_pred(n - 1, ny), z_true(n, nz), z_pred(n, nz);
  for (std::size_t k = 0; k < n; ++k) {
    const Record& r = ds.records[k];
    const Vector x = bnn_forward(m.phi, r.y, r.d);
    const Vector v = bnn_forward(m.psi, r.u, r.d);
    z_true.row(k) = r.z.transpose();
    z_pred.row(k) = eval_constraint(m, x, v, r.d).transpose();
    if (k + 1 == n) break;
    const Record& r1 = ds.records[k + 1];
    const double span = r1.t - r.t;
    const int sub = 10;
    const double h = span / sub;
    auto f = [&](double s, const Vector& xs) {
      const double w = s / span;
      const Vector d = r.d + w * (r1.d - r.d);
      const Vector u = r.u + w * (r1.u - r.u);
      const DynValues dv = eval_dynamics(m, d);
      return Vector(dv.a * xs + dv.b * bnn_forward(m.psi, u, d) + dv.c);
    };
    Vector xs = x;
    for (int i = 0; i < sub; ++i) {
      const double s = i * h;
      const Vector k1 = f(s, xs);
      const Vector k2 = f(s + 0.5 * h, xs + 0.5 * h * k1);
      const Vector k3 = f(s + 0.5 * h, xs + 0.5 * h * k2);
      const Vector k4 = f(s + h, xs + h * k3);
      xs += h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4);
    }
    y_true.row(k) = r1.y.transpose();
    y_pred.row(k) = bnn_inverse(m.phi, xs, r1.d).transpose();
  }
  auto r2 = [](const Matrix& truth, const Matrix& pred) {
    Vector out(truth.cols());
    for (Eigen::Index j = 0; j < truth.cols(); ++j) {
      const double mean = truth.col(j).mean();
      const double sst = (truth.col(j).array() - mean).square().sum();
      const double sse = (truth.col(j) - pred.col(j)).squaredNorm();
      out(j) = sst > 0.0 ? 1.0 - sse / sst : (sse == 0.0 ? 1.0 : -std::numeric_limits<double>::infinity());
    }
    return out;
  };
  return {r2(y_true, y_pred), r2(z_true, z_pred)};
}

}  // namespace shwmpc
