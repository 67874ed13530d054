#include "shwmpc/ocp.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include "fixtures.hpp"
#include "oracles.hpp"
#include "shwmpc/error.hpp"

namespace shwmpc {
namespace {

ShwDims dims2() { return {2, 2, 1, 1}; }

// Random model with an instance whose z penalty is active at some stages.
struct RandomCase {
  ShwModel m;
  OcpInstance inst;
};

RandomCase random_case(std::uint64_t seed, int horizon = 6, bool penalty = true) {
  std::mt19937_64 rng(seed);
  RandomCase rc{fixture::random_model(rng, dims2(), 6), {}};
  const Vector d = oracle::random_vector(1, rng, 0.5);
  const Vector x0 = bnn_forward(rc.m.phi, oracle::random_vector(2, rng, 0.5), d);
  const Vector r = oracle::random_vector(2, rng, 0.5);
  OcpConfig cfg;
  cfg.horizon = horizon;
  cfg.z_penalty = penalty;
  const Vector z_mid = eval_constraint(rc.m, x0, bnn_forward(rc.m.psi, Vector::Zero(2), d), d);
  cfg.z_ceiling = z_mid.array() - 0.05;
  rc.inst = make_instance(rc.m, x0, d, r, cfg);
  return rc;
}

ShwModel affine_phi_model(double scale) {
  ShwModel m = fixture::identity_model(dims2());
  const TanhNetArch on = m.phi.arch.omega_net();
  const int n = m.phi.arch.xi_dim;
  for (int k = 0; k < n; ++k) m.phi.theta[on.num_params() - on.out + k * n + k] = scale;
  return m;
}

TEST(BuildQ, IdentityPhiGivesIdentity) {
  const ShwModel m = fixture::identity_model(dims2());
  const Matrix q = build_q(m, Vector::Constant(2, 0.4), Vector::Zero(1), 3);
  EXPECT_LT((q - Matrix::Identity(6, 6)).norm(), 1e-14);
}

TEST(BuildQ, AffinePhiGivesQuarter) {
  const ShwModel m = affine_phi_model(2.0);
  ASSERT_LT((bnn_jacobian(m.phi, Vector::Ones(2), Vector::Zero(1)) - 2.0 * Matrix::Identity(2, 2))
                .norm(),
            1e-14);
  const Matrix q = build_q(m, Vector::Constant(2, -0.3), Vector::Zero(1), 2);
  EXPECT_LT((q.topLeftCorner(2, 2) - 0.25 * Matrix::Identity(2, 2)).norm(), 1e-14);
  EXPECT_LT((q.bottomRightCorner(2, 2) - 0.25 * Matrix::Identity(2, 2)).norm(), 1e-14);
  EXPECT_EQ(q.topRightCorner(2, 2).norm(), 0.0);
}

TEST(BuildQ, MatchesFiniteDifferenceOfInverse) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 10; ++trial) {
    const ShwModel m = fixture::random_model(rng, dims2());
    const Vector d = oracle::random_vector(1, rng);
    const Vector x0 = oracle::random_vector(2, rng);
    const Matrix g = oracle::fd_jacobian(
        [&](const Vector& x) { return bnn_inverse(m.phi, x, d); }, x0);
    const Matrix q = build_q(m, x0, d, 1);
    EXPECT_LT(oracle::rel_err(q, g.transpose() * g), 1e-4);
  }
}

TEST(BuildStacked, HorizonOne) {
  std::mt19937_64 rng(5);
  DiscreteModel dm{oracle::random_matrix(2, 2, rng), oracle::random_matrix(2, 2, rng),
                   oracle::random_vector(2, rng), Vector::Zero(1)};
  const StackedAffine s = build_stacked(dm, 1);
  EXPECT_EQ(s.a_bar, dm.a_d);
  EXPECT_EQ(s.b_bar, dm.b_d);
  EXPECT_EQ(s.c_bar, dm.c_d);
  EXPECT_THROW(build_stacked(dm, 0), Error);
}

TEST(BuildStacked, IdentityAAccumulatesOffset) {
  DiscreteModel dm{Matrix::Identity(2, 2), Matrix::Identity(2, 2), Vector::Constant(2, 0.5),
                   Vector::Zero(1)};
  const StackedAffine s = build_stacked(dm, 4);
  for (int k = 0; k < 4; ++k) {
    EXPECT_LT((s.c_bar.segment(2 * k, 2) - (k + 1) * dm.c_d).norm(), 1e-15);
  }
  EXPECT_EQ(s.b_bar.topRightCorner(2, 6).norm(), 0.0);
}

TEST(BuildStacked, MatchesDiscreteRollout) {
  std::mt19937_64 rng(7);
  const ShwModel m = fixture::random_model(rng, dims2());
  const Vector d = oracle::random_vector(1, rng);
  const DiscreteModel dm = discretize(m, d);
  const int n = 5;
  const StackedAffine s = build_stacked(dm, n);
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const Vector x0 = oracle::random_vector(2, rng);
    std::vector<Vector> u;
    Vector v(2 * n);
    for (int k = 0; k < n; ++k) {
      u.push_back(oracle::random_vector(2, rng, 0.9));
      v.segment(2 * k, 2) = bnn_forward(m.psi, u.back(), d);
    }
    const DiscreteRollout r = simulate_discrete(dm, m, x0, u, d);
    const Vector x = s.a_bar * x0 + s.b_bar * v + s.c_bar;
    for (int k = 0; k < n; ++k) {
      worst = std::max(worst, (x.segment(2 * k, 2) - r.x[k + 1]).cwiseAbs().maxCoeff());
    }
  }
  EXPECT_LT(worst, 1e-10);
}

TEST(Objective, ExactTrackingHasZeroMinimum) {
  const ShwModel m = fixture::identity_model(dims2());
  const Vector r = Vector::Constant(2, 0.3);
  OcpConfig cfg;
  cfg.horizon = 5;
  cfg.z_weight = Vector::Zero(1);
  const OcpInstance inst = make_instance(m, r, Vector::Zero(1), r, cfg);
  // x' = -x + v, so v = r holds x at r.
  const Vector v = r.replicate(5, 1);
  EXPECT_NEAR(objective(inst, v), 0.0, 1e-24);
  const OcpSolution sol = solve(inst);
  EXPECT_NEAR(sol.objective, 0.0, 1e-15);
  EXPECT_LT((sol.v - v).cwiseAbs().maxCoeff(), 1e-7);
}

TEST(Objective, CubicHingeByHand) {
  const ShwModel m = fixture::identity_model(dims2());
  const Vector x0 = Vector::Zero(2);
  OcpConfig cfg;
  cfg.horizon = 1;
  // Zero-weight Xi outputs log 2 everywhere.
  cfg.z_ceiling = Vector::Constant(1, std::log(2.0) - 2.0);
  const OcpInstance inst = make_instance(m, x0, Vector::Zero(1), x0, cfg);
  // Stay at the origin: tracking error zero, penalty (2)^3 = 8.
  EXPECT_NEAR(objective(inst, Vector::Zero(2)), 8.0, 1e-12);
  cfg.z_ceiling = Vector::Constant(1, std::log(2.0) + 2.0);
  const OcpInstance off = make_instance(m, x0, Vector::Zero(1), x0, cfg);
  EXPECT_EQ(objective(off, Vector::Zero(2)), 0.0);
}

TEST(Objective, GradientMatchesFiniteDifferences) {
  for (std::uint64_t seed : {11, 12, 13}) {
    const RandomCase rc = random_case(seed);
    std::mt19937_64 rng(seed);
    const Vector v = oracle::random_vector(rc.inst.n_v(), rng, 0.3);
    Vector g;
    Matrix h;
    objective(rc.inst, v, &g, &h);
    const Vector fd = oracle::fd_gradient([&](const Vector& x) { return objective(rc.inst, x); }, v);
    EXPECT_LT(oracle::rel_err(g, fd), 1e-5);
    const Matrix fdh = oracle::fd_jacobian(
        [&](const Vector& x) {
          Vector gx;
          objective(rc.inst, x, &gx);
          return gx;
        },
        v);
    EXPECT_LT(oracle::rel_err(h, fdh), 1e-4);
  }
}

TEST(Objective, PenaltyIsActiveInRandomCase) {
  const RandomCase rc = random_case(11);
  const auto z = stage_z(rc.inst, 0.5 * (rc.inst.v_lower + rc.inst.v_upper));
  double worst = -1e300;
  for (const Vector& zk : z) worst = std::max(worst, (zk - rc.inst.z_ceiling).maxCoeff());
  EXPECT_GT(worst, 0.0);
}

TEST(Objective, OneXiCallPerStageAndOrderIndependent) {
  const RandomCase rc = random_case(14, 8);
  std::mt19937_64 rng(1);
  const Vector v = oracle::random_vector(rc.inst.n_v(), rng, 0.3);
  ObjectiveTrace tr;
  Vector g1;
  const double f1 = objective(rc.inst, v, &g1, nullptr, &tr);
  EXPECT_EQ(tr.xi_calls, rc.inst.n);
  EXPECT_EQ(tr.psi_calls, 0);
  EXPECT_EQ(tr.rollout_steps, 0);
  std::vector<int> order(rc.inst.n);
  std::iota(order.begin(), order.end(), 0);
  std::reverse(order.begin(), order.end());
  std::shuffle(order.begin(), order.end(), rng);
  ObjectiveTrace tr2;
  Vector g2;
  const double f2 = objective(rc.inst, v, &g2, nullptr, &tr2, &order);
  EXPECT_EQ(tr2.stage_order, order);
  EXPECT_NEAR(f1, f2, 1e-12 * std::max(1.0, std::abs(f1)));
  EXPECT_LT((g1 - g2).cwiseAbs().maxCoeff(), 1e-12 * std::max(1.0, g1.norm()));
}

TEST(Objective, StrictlyConvexAlongChords) {
  const RandomCase rc = random_case(15);
  const Matrix h0 = 2.0 * rc.inst.stacked.b_bar.transpose() * rc.inst.q * rc.inst.stacked.b_bar;
  const double mu = Eigen::SelfAdjointEigenSolver<Matrix>(h0).eigenvalues().minCoeff();
  ASSERT_GT(mu, 0.0);
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 200; ++trial) {
    const Vector a = oracle::random_vector(rc.inst.n_v(), rng, 1.0);
    const Vector b = oracle::random_vector(rc.inst.n_v(), rng, 1.0);
    const double mid = objective(rc.inst, 0.5 * (a + b));
    const double mean = 0.5 * (objective(rc.inst, a) + objective(rc.inst, b));
    EXPECT_LE(mid, mean - mu * (a - b).squaredNorm() / 8.0 + 1e-10);
  }
}

TEST(Objective, HingeDerivativeIsNonnegative) {
  const ShwModel m = fixture::identity_model(dims2());
  OcpConfig cfg;
  cfg.horizon = 1;
  for (double s : {-3.0, -0.1, 0.0, 0.1, 3.0}) {
    cfg.z_ceiling = Vector::Constant(1, std::log(2.0) - s);
    const OcpInstance a = make_instance(m, Vector::Zero(2), Vector::Zero(1), Vector::Zero(2), cfg);
    cfg.z_ceiling = Vector::Constant(1, std::log(2.0) - s - 1e-6);
    const OcpInstance b = make_instance(m, Vector::Zero(2), Vector::Zero(1), Vector::Zero(2), cfg);
    EXPECT_GE(objective(b, Vector::Zero(2)) - objective(a, Vector::Zero(2)), 0.0);
  }
}

TEST(Solve, LinearQuadraticMatchesNormalEquations) {
  std::mt19937_64 rng(17);
  ShwModel m = fixture::identity_model(dims2());
  fixture::set_constant_dynamics(m, Matrix{{-1.0, 0.3}, {0.0, -0.5}},
                                 Matrix{{1.0, 0.2}, {-0.1, 0.8}}, Vector::Constant(2, 0.05));
  OcpConfig cfg;
  cfg.horizon = 6;
  cfg.z_penalty = false;
  cfg.u_lower = Vector::Constant(2, -1e3);
  cfg.u_upper = Vector::Constant(2, 1e3);
  for (int trial = 0; trial < 5; ++trial) {
    const Vector x0 = oracle::random_vector(2, rng);
    const Vector r = oracle::random_vector(2, rng);
    const OcpInstance inst = make_instance(m, x0, Vector::Zero(1), r, cfg);
    const auto& s = inst.stacked;
    const Matrix h = s.b_bar.transpose() * inst.q * s.b_bar;
    const Vector rhs =
        s.b_bar.transpose() * inst.q * (s.a_bar * x0 + s.c_bar - r.replicate(cfg.horizon, 1));
    const Vector expected = -h.ldlt().solve(rhs);
    ASSERT_LT(expected.cwiseAbs().maxCoeff(), 1e3);
    const OcpSolution sol = solve(inst);
    EXPECT_LT((sol.v - expected).cwiseAbs().maxCoeff(), 1e-8);
    EXPECT_EQ(sol.lambda.norm(), 0.0);
    EXPECT_LE(sol.kkt_residual_inf, 1e-8);
  }
}

TEST(Solve, MultiStartAgreement) {
  for (std::uint64_t seed : {21, 22}) {
    const RandomCase rc = random_case(seed, 10);
    const auto inits = default_inits(rc.inst, 10, seed);
    const OcpSolution ref = solve(rc.inst, inits[0]);
    for (const Vector& v0 : inits) {
      const OcpSolution sol = solve(rc.inst, v0);
      EXPECT_LT((sol.v - ref.v).cwiseAbs().maxCoeff(), 1e-6);
      EXPECT_LE(sol.kkt_residual_inf, 1e-8);
    }
  }
}

TEST(Solve, ActiveBoundsAndMultiplierSigns) {
  const ShwModel m = fixture::identity_model(dims2());
  OcpConfig cfg;
  cfg.horizon = 5;
  cfg.z_penalty = false;
  const Vector r(Eigen::Vector2d(20.0, -20.0));
  const OcpInstance inst = make_instance(m, Vector::Zero(2), Vector::Zero(1), r, cfg);
  const OcpSolution sol = solve(inst);
  const int nv = inst.n_v();
  for (int i = 0; i < nv; ++i) {
    const double want = i % 2 == 0 ? inst.v_upper(i) : inst.v_lower(i);
    EXPECT_EQ(sol.v(i), want);
  }
  EXPECT_GE(sol.lambda.minCoeff(), 0.0);
  EXPECT_GT(sol.lambda.maxCoeff(), 0.0);
  const Vector f = kkt_residual(inst, sol.v, sol.lambda);
  EXPECT_LE(f.cwiseAbs().maxCoeff(), 1e-8);
  for (int i = 0; i < nv; ++i) {
    EXPECT_LE(std::abs(sol.lambda(i) * (inst.v_lower(i) - sol.v(i))), 1e-7);
    EXPECT_LE(std::abs(sol.lambda(nv + i) * (sol.v(i) - inst.v_upper(i))), 1e-7);
  }
}

TEST(Solve, CertificateAndInputBoxOnRandomInstances) {
  for (std::uint64_t seed = 30; seed < 36; ++seed) {
    const RandomCase rc = random_case(seed, 8);
    const OcpSolution sol = solve(rc.inst);
    const Vector f = kkt_residual(rc.inst, sol.v, sol.lambda);
    EXPECT_LE(f.cwiseAbs().maxCoeff(), 1e-8);
    EXPECT_LE(sol.kkt_residual_inf, 1e-8);
    for (int k = 0; k < rc.inst.n; ++k) {
      const Vector uk = sol.u.segment(2 * k, 2);
      EXPECT_TRUE((uk.array() >= rc.inst.u_lower.array()).all());
      EXPECT_TRUE((uk.array() <= rc.inst.u_upper.array()).all());
      EXPECT_LT((bnn_forward(rc.m.psi, uk, rc.inst.d_bar) - sol.v.segment(2 * k, 2)).norm(),
                1e-8);
    }
    const int nv = rc.inst.n_v();
    for (int i = 0; i < nv; ++i) {
      EXPECT_GE(sol.lambda(i), 0.0);
      EXPECT_GE(sol.lambda(nv + i), 0.0);
      EXPECT_LE(sol.lambda(i) * (sol.v(i) - rc.inst.v_lower(i)), 1e-7);
      EXPECT_LE(sol.lambda(nv + i) * (rc.inst.v_upper(i) - sol.v(i)), 1e-7);
    }
  }
}

TEST(Solve, IterationCapRaisesWithResidual) {
  RandomCase rc = random_case(40);
  rc.inst.max_iterations = 0;
  try {
    solve(rc.inst);
    FAIL() << "expected SolverError";
  } catch (const SolverError& e) {
    EXPECT_GT(e.last_residual(), 1e-8);
  }
}

TEST(Solve, HardCeilingIsRespected) {
  std::mt19937_64 rng(41);
  const ShwModel m = fixture::random_model(rng, dims2(), 6);
  const Vector d = Vector::Zero(1);
  // Start at the steady state of u = 0 so holding u = 0 is feasible.
  const DiscreteModel dm = discretize(m, d);
  const Vector v0 = bnn_forward(m.psi, Vector::Zero(2), d);
  const Vector x0 =
      (Matrix::Identity(2, 2) - dm.a_d).partialPivLu().solve(dm.b_d * v0 + dm.c_d);
  OcpConfig cfg;
  cfg.horizon = 6;
  const Vector z0 = eval_constraint(m, x0, v0, d);
  cfg.z_ceiling = z0.array() + 0.02;
  const Vector r(Eigen::Vector2d(0.8, 0.8));
  const OcpInstance soft = make_instance(m, x0, d, r, cfg);
  cfg.hard_z = true;
  const OcpInstance hard = make_instance(m, x0, d, r, cfg);
  const OcpSolution ss = solve(soft);
  const OcpSolution sh = solve(hard);
  EXPECT_LE((sh.z_max - hard.z_ceiling).maxCoeff(), 1e-7);
  EXPECT_LE(sh.kkt_residual_inf, 1e-8);
  // The soft variant trades a little violation for tracking.
  EXPECT_GE((ss.z_max - soft.z_ceiling).maxCoeff(), (sh.z_max - hard.z_ceiling).maxCoeff());
}

TEST(Fb, ClosedFormValues) {
  EXPECT_EQ(fischer_burmeister(0.0, 0.0), 0.0);
  EXPECT_NEAR(fischer_burmeister(3.0, 4.0), 2.0, 1e-15);
  EXPECT_NEAR(fischer_burmeister(0.0, 5.0), 0.0, 1e-15);
  EXPECT_LT(fischer_burmeister(-1.0, 2.0), 0.0);
}

TEST(Fb, InteriorOptimumReducesToGradient) {
  const ShwModel m = fixture::identity_model(dims2());
  OcpConfig cfg;
  cfg.horizon = 3;
  cfg.z_penalty = false;
  cfg.u_lower = Vector::Constant(2, -100.0);
  cfg.u_upper = Vector::Constant(2, 100.0);
  const Vector r = Vector::Constant(2, 0.2);
  const OcpInstance inst = make_instance(m, Vector::Zero(2), Vector::Zero(1), r, cfg);
  const OcpSolution sol = solve(inst);
  EXPECT_EQ(sol.lambda.norm(), 0.0);
  const Vector v = sol.v.array() + 0.01;
  Vector g;
  objective(inst, v, &g);
  const Vector f = kkt_residual(inst, v, Vector::Zero(2 * inst.n_v()));
  EXPECT_LT((f.head(inst.n_v()) - g).norm(), 1e-15);
  EXPECT_EQ(f.tail(2 * inst.n_v()).norm(), 0.0);
}

TEST(Instance, RejectsBadConfig) {
  const ShwModel m = fixture::identity_model(dims2());
  OcpConfig cfg;
  cfg.horizon = 0;
  EXPECT_THROW(make_instance(m, Vector::Zero(2), Vector::Zero(1), Vector::Zero(2), cfg),
               ConfigError);
  cfg.horizon = 3;
  cfg.u_lower = Vector::Constant(2, 1.0);
  cfg.u_upper = Vector::Constant(2, 1.0);
  EXPECT_THROW(make_instance(m, Vector::Zero(2), Vector::Zero(1), Vector::Zero(2), cfg),
               ConfigError);
  cfg.u_lower = {};
  cfg.u_upper = {};
  cfg.z_weight = Vector::Constant(1, -1.0);
  EXPECT_THROW(make_instance(m, Vector::Zero(2), Vector::Zero(1), Vector::Zero(2), cfg),
               ConfigError);
}

TEST(Sweep, ProposedModelIsUniqueAndLipschitz) {
  std::mt19937_64 rng(50);
  const ShwModel m = fixture::random_model(rng, dims2(), 6);
  OcpConfig cfg;
  cfg.horizon = 8;
  cfg.z_ceiling = Vector::Constant(1, 1e3);
  std::vector<double> grid;
  for (int i = 0; i <= 20; ++i) grid.push_back(-1.0 + 0.1 * i);
  const SweepTable t = control_law_sweep(m, cfg, Vector::Zero(1), Vector::Constant(2, 0.2),
                                         Vector::Zero(2), Vector::Unit(2, 0), grid, 4, 7);
  EXPECT_EQ(t.failures, 0);
  ASSERT_EQ(t.rows.size(), grid.size() * 4);
  for (double dis : t.disagreement) EXPECT_LE(dis, 1e-6);
  EXPECT_TRUE(std::isfinite(t.max_quotient));
  EXPECT_LE(t.max_quotient, 10.0 * t.median_quotient + 1e-12);

  const auto path = std::filesystem::temp_directory_path() / "ocp_sweep_test.csv";
  write_sweep_csv(path.string(), t, "seed=7");
  std::ifstream in(path);
  std::string comment, header;
  std::getline(in, comment);
  std::getline(in, header);
  EXPECT_EQ(comment, "# seed=7");
  EXPECT_EQ(header, "grid,init,u_1,u_2,objective,kkt_residual,iterations");
  int lines = 0;
  for (std::string line; std::getline(in, line);) ++lines;
  EXPECT_EQ(lines, static_cast<int>(t.rows.size()));
  std::filesystem::remove(path);
}

TEST(Sweep, ErrorsAreRecordedPerRow) {
  const SweepTable t = run_sweep({0.0, 1.0, 2.0}, 2, [](double s, int init) {
    if (s == 1.0 && init == 1) throw SolverError("boom", 1.0);
    return FirstStep{Vector::Constant(1, s), 0.0, 0.0, 1};
  });
  EXPECT_EQ(t.failures, 1);
  EXPECT_EQ(t.rows[3].error, "boom");
  EXPECT_TRUE(std::isnan(t.disagreement[1]));
  EXPECT_EQ(t.disagreement[0], 0.0);
  EXPECT_NEAR(t.quotient[0], 1.0, 1e-15);
  EXPECT_THROW(run_sweep({}, 1, nullptr), ConfigError);
}

}  // namespace
}  // namespace shwmpc
