#include "shwmpc/ident.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <cstdlib>
#include <limits>
#include <random>

#include "fixtures.hpp"
#include "oracles.hpp"
#include "shwmpc/plant.hpp"

namespace shwmpc {
namespace {

TimeSeriesDataset random_records(const ShwDims& dm, std::size_t n, std::mt19937_64& rng) {
  TimeSeriesDataset ds;
  ds.dims = dm;
  for (std::size_t k = 0; k < n; ++k) {
    Record r;
    r.t = static_cast<double>(k);
    r.u = oracle::random_vector(dm.n_u, rng);
    r.d = oracle::random_vector(dm.n_d, rng);
    r.y = oracle::random_vector(dm.n_y, rng);
    r.z = oracle::random_vector(dm.n_z, rng);
    r.ydot = oracle::random_vector(dm.n_y, rng);
    r.ddot = oracle::random_vector(dm.n_d, rng);
    ds.records.push_back(r);
  }
  return ds;
}

ShwModel tiny_model(std::mt19937_64& rng) {
  ShwArchConfig cfg;
  cfg.dims = {1, 1, 1, 1};
  cfg.bnn_depth = 1;
  cfg.bnn_width = 2;
  cfg.picnn_depth = 1;
  cfg.picnn_width = 2;
  cfg.dyn_width = 2;
  ShwInit init;
  init.psi = {0.5, 0.3};
  init.phi = {0.5, 0.3};
  init.xi = {0.5, -0.5, 1.0};
  init.dyn_stddev = 0.5;
  return make_shw_model(cfg, rng, init);
}

TEST(Ident, ThetaBundleRoundtrip) {
  std::mt19937_64 rng(1);
  const ShwModel m = fixture::random_model(rng);
  ThetaBundle b = ThetaBundle::from_model(m);
  EXPECT_EQ(b.size(), m.num_params());
  EXPECT_EQ(b.slice(Component::kPhi).size(), m.phi.theta.size());
  EXPECT_EQ(b.slice(Component::kC).size(), m.dyn.c.size());
  ShwModel copy = m;
  for (double& v : b.slice(Component::kB)) v += 1.0;
  b.to_model(copy);
  EXPECT_EQ(copy.dyn.b[0], m.dyn.b[0] + 1.0);
  EXPECT_EQ(copy.phi.theta, m.phi.theta);
}

TEST(Ident, LossVanishesOnGeneratorData) {
  SyntheticPlant plant(PlantConfig{});
  const TimeSeriesDataset ds = generate_dataset(plant, ExcitationConfig{}, 20.0, 0.1);
  EXPECT_LT(loss(plant.truth(), ds, Matrix::Identity(4, 4)), 1e-12);
}

TEST(Ident, SingleRecordLossIsSquaredResidual) {
  std::mt19937_64 rng(2);
  const ShwModel m = fixture::random_model(rng);
  const TimeSeriesDataset ds = random_records(m.dims, 1, rng);
  const Record& r = ds.records[0];
  const Vector e = residual(m, r.u, r.d, r.y, r.z, r.ydot, r.ddot);
  EXPECT_NEAR(loss(m, ds, Matrix::Identity(4, 4)), e.squaredNorm(), 1e-12 * e.squaredNorm());
}

TEST(Ident, LossIsLinearInWeight) {
  std::mt19937_64 rng(3);
  const ShwModel m = fixture::random_model(rng);
  const TimeSeriesDataset ds = random_records(m.dims, 40, rng);
  const Matrix k = oracle::random_matrix(4, 4, rng);
  const Matrix spd = k * k.transpose() + Matrix::Identity(4, 4);
  EXPECT_NEAR(loss(m, ds, 2.0 * spd), 2.0 * loss(m, ds, spd), 1e-12 * loss(m, ds, spd));
}

TEST(Ident, LossIsPermutationInvariant) {
  std::mt19937_64 rng(4);
  const ShwModel m = fixture::random_model(rng);
  const TimeSeriesDataset ds = random_records(m.dims, 37, rng);
  std::vector<std::size_t> idx(ds.size());
  std::iota(idx.begin(), idx.end(), 0);
  const double base = loss(m, ds, Matrix::Identity(4, 4), idx);
  std::shuffle(idx.begin(), idx.end(), rng);
  EXPECT_NEAR(loss(m, ds, Matrix::Identity(4, 4), idx), base, 1e-13 * base);
  const LossGrad g = grad_loss(m, ds, Matrix::Identity(4, 4), idx);
  EXPECT_NEAR(g.loss, base, 1e-13 * base);
}

TEST(Ident, GradientMatchesFiniteDifferencesPerSlice) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 3; ++trial) {
    const ShwModel m = tiny_model(rng);
    const TimeSeriesDataset ds = random_records(m.dims, 6, rng);
    Matrix k(2, 2);
    k << 1.0, 0.2, 0.2, 0.5;
    const LossGrad lg = grad_loss(m, ds, k);
    EXPECT_NEAR(lg.loss, loss(m, ds, k), 1e-13);
    const ThetaBundle base = ThetaBundle::from_model(m);
    for (int c = 0; c < kNumComponents; ++c) {
      const auto comp = static_cast<Component>(c);
      const auto g = lg.grad.slice(comp);
      const std::size_t off = base.bounds[c];
      Vector fd(static_cast<Eigen::Index>(g.size()));
      for (std::size_t i = 0; i < g.size(); ++i) {
        const double h = 1e-6;
        ThetaBundle p = base;
        ShwModel mp = m;
        p.values[off + i] += h;
        p.to_model(mp);
        const double fp = loss(mp, ds, k);
        p.values[off + i] -= 2 * h;
        p.to_model(mp);
        const double fm = loss(mp, ds, k);
        fd(i) = (fp - fm) / (2 * h);
      }
      const Vector ad = Eigen::Map<const Vector>(g.data(), static_cast<Eigen::Index>(g.size()));
      EXPECT_LT(oracle::rel_err(ad, fd, 1e-8), 1e-4) << component_name(comp);
    }
  }
}

TEST(Ident, GradientIndependentOfThreadCount) {
  std::mt19937_64 rng(6);
  const ShwModel m = fixture::random_model(rng);
  const TimeSeriesDataset ds = random_records(m.dims, 70, rng);
  setenv("SHWMPC_THREADS", "1", 1);
  const LossGrad a = grad_loss(m, ds, Matrix::Identity(4, 4));
  setenv("SHWMPC_THREADS", "3", 1);
  const LossGrad b = grad_loss(m, ds, Matrix::Identity(4, 4));
  unsetenv("SHWMPC_THREADS");
  EXPECT_EQ(a.loss, b.loss);
  EXPECT_EQ(a.grad.values, b.grad.values);
}

TEST(Ident, SingularJacobianNamesRecord) {
  std::mt19937_64 rng(7);
  ShwModel m = fixture::identity_model({2, 2, 1, 1});
  // Omega of Phi: bias of the omega net set to a rank-one matrix.
  const TanhNetArch on = m.phi.arch.omega_net();
  const std::size_t bias = on.num_params() - on.out;
  m.phi.theta[bias + 0] = 1.0;
  m.phi.theta[bias + 1] = 1.0;
  m.phi.theta[bias + 2] = 1.0;
  m.phi.theta[bias + 3] = 1.0;
  const TimeSeriesDataset ds = random_records(m.dims, 3, rng);
  try {
    loss(m, ds, Matrix::Identity(3, 3));
    FAIL() << "expected ConditioningError";
  } catch (const ConditioningError& e) {
    EXPECT_NE(std::string(e.what()).find("record 0"), std::string::npos);
  }
}

TEST(Ident, ConfigValidation) {
  IdentConfig cfg;
  const ShwDims dm;
  EXPECT_NO_THROW(cfg.validate(dm));
  cfg.k_e = Matrix::Identity(4, 4);
  cfg.k_e(0, 0) = -1.0;
  EXPECT_THROW(cfg.validate(dm), ConfigError);
  cfg.k_e = Matrix::Identity(3, 3);
  EXPECT_THROW(cfg.validate(dm), ConfigError);
  cfg = IdentConfig{};
  cfg.batch_size = 0;
  EXPECT_THROW(cfg.validate(dm), ConfigError);
}

TEST(Ident, LinearPartAloneMatchesLeastSquares) {
  // Psi, Phi identity and frozen, data from x' = A x + B u + c.
  std::mt19937_64 rng(8);
  const ShwDims dm{2, 2, 1, 1};
  Matrix a(2, 2), b(2, 2);
  a << -1.0, 0.3, -0.2, -0.7;
  b << 0.8, 0.1, -0.3, 1.2;
  Vector c(2);
  c << 0.2, -0.1;
  TimeSeriesDataset ds;
  ds.dims = dm;
  for (int k = 0; k < 300; ++k) {
    Record r;
    r.t = k;
    r.u = oracle::random_vector(2, rng);
    r.y = oracle::random_vector(2, rng);
    r.d = Vector::Zero(1);
    r.ddot = Vector::Zero(1);
    r.z = Vector::Constant(1, std::log(2.0));
    r.ydot = a * r.y + b * r.u + c + 1e-3 * oracle::random_vector(2, rng);
    ds.records.push_back(r);
  }
  // Least-squares oracle on [y u 1] over the training part.
  const std::size_t n_train = 240;
  Matrix reg(n_train, 5), tgt(n_train, 2);
  for (std::size_t k = 0; k < n_train; ++k) {
    const Record& r = ds.records[k];
    reg.row(k) << r.y.transpose(), r.u.transpose(), 1.0;
    tgt.row(k) = r.ydot.transpose();
  }
  const Matrix sol = reg.colPivHouseholderQr().solve(tgt).transpose();

  ShwModel m = fixture::identity_model(dm, -0.5);
  IdentConfig cfg;
  cfg.epochs = 20;
  cfg.learning_rate = 1e-2;
  cfg.lbfgs_iterations = 300;
  cfg.train = {false, false, false, true, true, true};
  const TimeSeriesDataset before = ds;
  const FitResult res = fit(m, ds, cfg);
  EXPECT_EQ(res.model.psi.theta, m.psi.theta);
  EXPECT_EQ(res.model.phi.theta, m.phi.theta);
  const DynValues dv = eval_dynamics(res.model, Vector::Zero(1));
  EXPECT_LT((dv.a - sol.leftCols(2)).cwiseAbs().maxCoeff(), 1e-3);
  EXPECT_LT((dv.b - sol.middleCols(2, 2)).cwiseAbs().maxCoeff(), 1e-3);
  EXPECT_LT((dv.c - sol.col(4)).cwiseAbs().maxCoeff(), 1e-3);
  // Training never mutates the dataset.
  for (std::size_t k = 0; k < ds.size(); ++k) EXPECT_EQ(ds.records[k].ydot, before.records[k].ydot);
}

TEST(Ident, FitReportAndStructuralInvariants) {
  SyntheticPlant plant(PlantConfig{});
  const TimeSeriesDataset ds = generate_dataset(plant, ExcitationConfig{}, 30.0, 0.1);
  ShwArchConfig arch;
  arch.bnn_width = arch.picnn_width = arch.dyn_width = 4;
  IdentConfig cfg;
  cfg.epochs = 4;
  cfg.learning_rate = 1e-2;
  const FitResult res = fit(ds, arch, cfg);
  ASSERT_EQ(res.report.epochs.size(), 4u);
  EXPECT_LT(res.report.epochs.back().train_loss, res.report.epochs.front().train_loss);
  EXPECT_EQ(res.report.num_train + res.report.num_val, ds.size());
  EXPECT_EQ(res.report.num_val, ds.size() / 5);
  EXPECT_GT(res.report.jacobian.min_abs_det, 0.0);
  EXPECT_GE(res.report.jacobian.max_abs_det, res.report.jacobian.min_abs_det);
  EXPECT_GT(res.report.jacobian.min_omega_det, kOmegaDetFloor);
  for (int i = 1; i <= res.model.xi.arch.depth; ++i) {
    for (double w : res.model.xi.effective_w_zeta(i)) EXPECT_GE(w, 0.0);
  }
  for (const Record& r : ds.records) EXPECT_GT(bnn_min_omega_det(res.model.psi, r.d), 1e-6);

  const FitResult again = fit(ds, arch, cfg);
  EXPECT_EQ(ThetaBundle::from_model(again.model).values,
            ThetaBundle::from_model(res.model).values);
}

TEST(Ident, NonFiniteLossReportsEpoch) {
  SyntheticPlant plant(PlantConfig{});
  TimeSeriesDataset ds = generate_dataset(plant, ExcitationConfig{}, 5.0, 0.1);
  ds.records[3].z(0) = std::numeric_limits<double>::quiet_NaN();
  ShwArchConfig arch;
  arch.bnn_width = arch.picnn_width = arch.dyn_width = 3;
  IdentConfig cfg;
  cfg.epochs = 2;
  try {
    fit(ds, arch, cfg);
    FAIL() << "expected TrainingError";
  } catch (const TrainingError& e) {
    EXPECT_EQ(e.epoch(), 0);
  }
}

TEST(Ident, OneStepScoresOfTruthArePerfect) {
  SyntheticPlant plant(PlantConfig{});
  const TimeSeriesDataset ds = generate_dataset(plant, ExcitationConfig{}, 30.0, 0.1);
  const OneStepScores s = one_step_scores(plant.truth(), ds);
  EXPECT_GT(s.r2_y.minCoeff(), 0.9999);
  EXPECT_NEAR(s.r2_z(0), 1.0, 1e-12);
}

}  // namespace
}  // namespace shwmpc
