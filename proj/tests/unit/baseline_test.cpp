#include "shwmpc/baseline.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "fixtures.hpp"
#include "oracles.hpp"
#include "shwmpc/error.hpp"
#include "shwmpc/plant.hpp"

namespace shwmpc {
namespace {

DenseNnModel random_dense(std::uint64_t seed, ShwDims dims = {2, 2, 1, 1}, int width = 6) {
  std::mt19937_64 rng(seed);
  DenseNnModel m = make_dense_model(dims, width, 0.1, rng);
  std::normal_distribution<double> n01(0.0, 0.3);
  for (double& b : m.b1.reshaped()) b = n01(rng);
  for (double& b : m.b2.reshaped()) b = n01(rng);
  return m;
}

// tanh(s a) / s is linear up to O(s^2): an NN that realizes y+ = Ad y + Bd u + cd.
DenseNnModel linear_dense(const Matrix& ad, const Matrix& bd, const Vector& cd, int nd) {
  const int ny = static_cast<int>(ad.rows()), nu = static_cast<int>(bd.cols());
  const double s = 1e-6;
  DenseNnModel m;
  m.dims = {nu, ny, 1, nd};
  m.width = ny;
  m.delta = 0.1;
  m.w1 = Matrix::Zero(ny, m.in_dim());
  m.w1.leftCols(ny) = s * ad;
  m.w1.middleCols(ny, nu) = s * bd;
  m.b1 = Vector::Zero(ny);
  m.w2 = Matrix::Zero(ny + 1, ny);
  m.w2.topRows(ny) = Matrix::Identity(ny, ny) / s;
  m.b2 = Vector::Zero(ny + 1);
  m.b2.head(ny) = cd;
  return m;
}

TEST(Dense, JacobianMatchesFiniteDifferences) {
  const DenseNnModel m = random_dense(1);
  std::mt19937_64 rng(2);
  const Vector y = oracle::random_vector(2, rng), u = oracle::random_vector(2, rng),
               d = oracle::random_vector(1, rng);
  const DenseEval e = dense_eval(m, y, u, d, true);
  Vector in(5);
  in << y, u, d;
  const Matrix fd = oracle::fd_jacobian(
      [&](const Vector& x) {
        const DenseEval ev = dense_eval(m, x.head(2), x.segment(2, 2), x.tail(1));
        Vector out(3);
        out << ev.y_next, ev.z;
        return out;
      },
      in);
  EXPECT_LT(oracle::rel_err(e.jac, fd), 1e-6);
}

TEST(Dense, ParamCountMatching) {
  const ShwDims dims{3, 3, 1, 2};
  for (std::size_t target : {200u, 1000u, 3456u}) {
    DenseNnModel m;
    m.dims = dims;
    m.width = width_for_param_count(dims, target);
    const double ratio = static_cast<double>(m.num_params()) / target;
    EXPECT_GT(ratio, 0.8);
    EXPECT_LT(ratio, 1.2);
  }
}

TEST(Dense, JsonRoundtrip) {
  const DenseNnModel m = random_dense(3);
  ArtifactMeta meta{"abc123", 9, ""};
  ArtifactMeta back;
  const DenseNnModel r = dense_model_from_json(dense_model_to_json(m, meta), &back);
  EXPECT_EQ(r.w1, m.w1);
  EXPECT_EQ(r.b1, m.b1);
  EXPECT_EQ(r.w2, m.w2);
  EXPECT_EQ(r.b2, m.b2);
  EXPECT_EQ(back.config_hash, "abc123");
  EXPECT_EQ(back.seed, 9u);
  EXPECT_EQ(back.kind, "nn-model");
  EXPECT_THROW(dense_model_from_json("{\"format\": 1}"), Error);
}

TEST(BaselineObjective, GradientMatchesFiniteDifferences) {
  const DenseNnModel m = random_dense(4);
  BaselineMpcConfig cfg;
  cfg.horizon = 5;
  std::mt19937_64 rng(5);
  const Vector y0 = oracle::random_vector(2, rng);
  const Vector d = oracle::random_vector(1, rng);
  // Ceiling below typical z so the hinge is active somewhere.
  cfg.z_ceiling = dense_eval(m, y0, Vector::Zero(2), d).z.array() - 0.2;
  const BaselineProblem p = make_baseline_problem(m, y0, d, Vector::Constant(2, 0.3), cfg);
  const Vector u = oracle::random_vector(10, rng, 0.8);
  Vector g;
  Matrix h;
  baseline_objective(p, u, &g, &h);
  const Vector fd = oracle::fd_gradient([&](const Vector& x) { return baseline_objective(p, x); }, u);
  EXPECT_LT(oracle::rel_err(g, fd), 1e-6);
  EXPECT_GE(Eigen::SelfAdjointEigenSolver<Matrix>(h).eigenvalues().minCoeff(), -1e-12);
}

TEST(BaselineSolve, LinearModelMatchesConvexSolver) {
  ShwModel sm = fixture::identity_model({2, 2, 1, 1});
  fixture::set_constant_dynamics(sm, Matrix{{-1.0, 0.3}, {0.0, -0.5}},
                                 Matrix{{1.0, 0.2}, {-0.1, 0.8}}, Vector::Constant(2, 0.05));
  const DiscreteModel dm = discretize(sm, Vector::Zero(1));
  const DenseNnModel nn = linear_dense(dm.a_d, dm.b_d, dm.c_d, 1);
  std::mt19937_64 rng(6);
  for (int trial = 0; trial < 5; ++trial) {
    const Vector y0 = oracle::random_vector(2, rng, 0.5);
    const Vector r = oracle::random_vector(2, rng, 0.5);
    OcpConfig oc;
    oc.horizon = 6;
    oc.z_penalty = false;
    const OcpSolution cs = solve(make_instance(sm, y0, Vector::Zero(1), r, oc));
    BaselineMpcConfig bc;
    bc.horizon = 6;
    bc.z_weight = Vector::Zero(1);
    bc.tolerance = 1e-10;
    const BaselineProblem p = make_baseline_problem(nn, y0, Vector::Zero(1), r, bc);
    const BaselineSolution bs = baseline_mpc_solve(p, Vector::Zero(12));
    EXPECT_LE(bs.residual_inf, 1e-10);
    EXPECT_LT((bs.u - cs.u).cwiseAbs().maxCoeff(), 1e-6);
  }
}

TEST(BaselineSolve, ActiveBoundsAndMultiplierSigns) {
  ShwModel sm = fixture::identity_model({2, 2, 1, 1});
  const DiscreteModel dm = discretize(sm, Vector::Zero(1));
  const DenseNnModel nn = linear_dense(dm.a_d, dm.b_d, dm.c_d, 1);
  BaselineMpcConfig bc;
  bc.horizon = 4;
  bc.z_weight = Vector::Zero(1);
  const BaselineProblem p =
      make_baseline_problem(nn, Vector::Zero(2), Vector::Zero(1), Vector(Eigen::Vector2d(9.0, -9.0)), bc);
  const BaselineSolution s = baseline_mpc_solve(p, Vector::Zero(8));
  for (int i = 0; i < 8; ++i) EXPECT_EQ(s.u(i), i % 2 == 0 ? 1.0 : -1.0);
  EXPECT_GE(s.lambda.minCoeff(), 0.0);
  EXPECT_GT(s.lambda.head(8).sum(), 0.0);
  EXPECT_GT(s.lambda.tail(8).sum(), 0.0);
}

TEST(BaselineSolve, FoldFixtureIsBimodal) {
  const DenseNnModel m = fold_model();
  BaselineMpcConfig cfg;
  cfg.horizon = 1;
  cfg.z_weight = Vector::Zero(1);
  const BaselineProblem p =
      make_baseline_problem(m, Vector::Zero(1), Vector::Zero(1), Vector::Ones(1), cfg);
  const auto inits = baseline_inits(p, 2, 0);
  const BaselineSolution a = baseline_mpc_solve(p, inits[0]);
  const BaselineSolution b = baseline_mpc_solve(p, inits[1]);
  EXPECT_GE(std::abs(a.u(0) - b.u(0)), 0.1);
  EXPECT_LE(a.residual_inf, 1e-6);
  EXPECT_LE(b.residual_inf, 1e-6);
  double best = 1e300;
  for (int i = 0; i <= 20000; ++i) {
    best = std::min(best, baseline_objective(p, Vector::Constant(1, -1.0 + i * 1e-4)));
  }
  EXPECT_LE(std::min(a.objective, b.objective), best + 1e-8);
}

TEST(BaselineSweep, FoldDisagreesSomewhere) {
  const DenseNnModel m = fold_model();
  BaselineMpcConfig cfg;
  cfg.horizon = 1;
  cfg.z_weight = Vector::Zero(1);
  std::vector<double> grid;
  for (int i = 0; i <= 20; ++i) grid.push_back(-1.0 + 0.1 * i);
  const SweepTable t = baseline_sweep(m, cfg, Vector::Zero(1), Vector::Ones(1), Vector::Zero(1),
                                      Vector::Ones(1), grid, 3, 1);
  EXPECT_EQ(t.failures, 0);
  double worst = 0.0;
  for (double d : t.disagreement) worst = std::max(worst, d);
  EXPECT_GT(worst, 0.05);
}

TEST(BaselineFit, ZeroEpochsReturnsInitializedModel) {
  TimeSeriesDataset ds;
  ds.dims = {1, 1, 1, 1};
  for (int k = 0; k < 50; ++k) {
    ds.records.push_back({0.1 * k, Vector::Constant(1, std::sin(0.3 * k)), Vector::Zero(1),
                          Vector::Constant(1, std::cos(0.2 * k)), Vector::Zero(1), {}, {}});
  }
  BaselineFitConfig cfg;
  cfg.epochs = 0;
  cfg.width = 4;
  const BaselineFitResult r = baseline_fit(ds, 0.1, cfg);
  EXPECT_TRUE(std::isfinite(r.train_loss));
  EXPECT_EQ(r.epochs_run, 0);
  EXPECT_THROW(baseline_fit(ds, 0.15, cfg), ConfigError);
}

TEST(BaselineFit, LinearTeacher) {
  TimeSeriesDataset ds;
  ds.dims = {2, 2, 1, 1};
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> uni(-1.0, 1.0);
  const Matrix a{{0.8, 0.1}, {-0.05, 0.9}};
  const Matrix b{{0.2, 0.0}, {0.05, 0.15}};
  Vector y = Vector::Zero(2);
  for (int k = 0; k < 3000; ++k) {
    Record r;
    r.t = 0.1 * k;
    r.u = Vector(Eigen::Vector2d(uni(rng), uni(rng)));
    r.d = Vector::Constant(1, 0.5 * std::sin(0.01 * k));
    r.y = y;
    r.z = Vector::Constant(1, 0.3 * y(0) - 0.2 * y(1) + 0.1 * r.u(0));
    y = a * y + b * r.u + 0.1 * r.d.replicate(2, 1);
    ds.records.push_back(r);
  }
  BaselineFitConfig cfg;
  cfg.width = 8;
  cfg.epochs = 150;
  cfg.learning_rate = 5e-3;
  const BaselineFitResult r = baseline_fit(ds, 0.1, cfg);
  for (double r2 : r.validation_r2) EXPECT_GT(r2, 0.999);
}

TEST(BaselineFit, TeacherStudentOnPlant) {
  const SyntheticPlant plant(PlantConfig{});
  const TimeSeriesDataset ds = generate_dataset(plant, ExcitationConfig{}, 300.0, 0.1);
  BaselineFitConfig cfg;
  cfg.match_params = 600;
  cfg.epochs = 150;
  cfg.learning_rate = 3e-3;
  const BaselineFitResult r = baseline_fit(ds, 0.1, cfg);
  ASSERT_EQ(r.validation_r2.size(), 4u);
  for (double r2 : r.validation_r2) EXPECT_GE(r2, 0.98);
}

}  // namespace
}  // namespace shwmpc
